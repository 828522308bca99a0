#pragma once

#include "cmscore/alignment.hpp"
#include "cmscore/config.hpp"
#include "cmscore/retrieval.hpp"

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace cmscore {

struct CommandOptions {
  bool force = false;
  bool resume = false;
  bool matrix_dump = false;
  bool random_baseline = false;
  bool oracle = false;
  std::optional<int> piece;  // align / identify: restrict to one test piece
};

// --- evaluation helpers ------------------------------------------------------

/// Every snippet of the split as a candidate row.
EmbeddingIndex snippet_index(const Model<float>& model, const Split& split);
/// Embeddings of every excerpt of the split, one row per pair.
MatrixX<float> excerpt_queries(const Model<float>& model, const Split& split);
/// Candidate row of each pair's true snippet.
std::vector<Index> snippet_targets(const Split& split);

/// Audio-to-sheet retrieval over a split: all excerpts query all snippets.
std::vector<Index> retrieval_ranks(const Model<float>& model, const Split& split);

struct RecordingIdentification {
  int piece_id = 0;   // true piece of the recording
  int rendering = 0;  // index into Split::renderings
  Index queries = 0;
  Identification result;
};

/// Each rendering of the split is one recording; its excerpts are the queries.
std::vector<RecordingIdentification> identify_recordings(const Model<float>& model, const Split& split,
                                                         Index votes_per_query = 25,
                                                         std::optional<int> only_piece = std::nullopt);

std::vector<PieceAlignment> align_split(const Model<float>& model, const Split& split, const SequenceConfig& seq,
                                        double reference_width, std::optional<int> only_piece = std::nullopt);

// --- ablation ---------------------------------------------------------------

struct AugmentToggles {
  bool image_scaling = false;
  bool dy_system = false;
  bool dx_note = false;
  bool multi_font = false;
  bool tempo_var = false;
};

/// Known rows: 1synth_tempo, 3synth_120, 3synth_tempo, image_scaling,
/// dy_system, dx_note, full_sheet, none, full.
AugmentToggles ablation_row(const std::string& name);
std::vector<std::string> ablation_row_names();
void apply_toggles(RunConfig& cfg, const AugmentToggles& t);

struct AblationRun {
  std::string row;
  std::uint64_t seed = 0;
  RetrievalMetrics metrics;
  int epochs = 0;
  long steps = 0;
};

/// Trains and evaluates every requested row for seeds seed .. seed+n-1.
std::vector<AblationRun> run_ablation(const RunConfig& cfg, std::ostream* log = nullptr);
std::string ablation_csv(const std::vector<AblationRun>& runs);
/// Per row in request order: median R@1, R@10, R@25 and MR over seeds.
std::string ablation_summary_csv(const std::vector<AblationRun>& runs, const std::vector<std::string>& rows);

// --- subcommands ------------------------------------------------------------

void run_gen_data(const RunConfig& cfg, const CommandOptions& opts, std::ostream& log);
void run_train(const RunConfig& cfg, const CommandOptions& opts, std::ostream& log);
void run_eval_retrieval(const RunConfig& cfg, const CommandOptions& opts, std::ostream& log);
void run_identify(const RunConfig& cfg, const CommandOptions& opts, std::ostream& log);
void run_align(const RunConfig& cfg, const CommandOptions& opts, std::ostream& log);
void run_ablate(const RunConfig& cfg, const CommandOptions& opts, std::ostream& log);

}  // namespace cmscore
