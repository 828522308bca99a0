#include "cmscore/pipeline.hpp"

#include "cmscore/checkpoint.hpp"
#include "cmscore/io.hpp"
#include "cmscore/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <sstream>

namespace cmscore {

namespace fs = std::filesystem;

// --- evaluation helpers ------------------------------------------------------

EmbeddingIndex snippet_index(const Model<float>& model, const Split& split) {
  EmbeddingIndex index;
  index.embeddings = embed_image(model, stack_images(split.snippets));
  for (const auto& piece : split.pieces) {
    for (std::size_t n = 0; n < piece.note_x.size(); ++n) {
      index.piece_ids.push_back(piece.piece.id);
      index.note_indices.push_back(static_cast<int>(n));
    }
  }
  index.validate();
  return index;
}

MatrixX<float> excerpt_queries(const Model<float>& model, const Split& split) {
  return embed_audio(model, stack_spectrograms(split.excerpts));
}

std::vector<Index> snippet_targets(const Split& split) {
  std::vector<Index> targets;
  for (const auto& p : split.pairs) targets.push_back(p.snippet);
  return targets;
}

std::vector<Index> retrieval_ranks(const Model<float>& model, const Split& split) {
  const auto index = snippet_index(model, split);
  return true_ranks(index, excerpt_queries(model, split), snippet_targets(split));
}

std::vector<RecordingIdentification> identify_recordings(const Model<float>& model, const Split& split,
                                                         Index votes_per_query, std::optional<int> only_piece) {
  const auto index = snippet_index(model, split);
  const MatrixX<float> queries = excerpt_queries(model, split);
  std::vector<RecordingIdentification> out;
  for (std::size_t r = 0; r < split.renderings.size(); ++r) {
    const int piece = split.renderings[r].piece_id;
    if (only_piece && *only_piece != piece) continue;
    std::vector<Index> rows;
    for (std::size_t j = 0; j < split.pairs.size(); ++j) {
      if (split.pairs[j].rendering == static_cast<int>(r)) rows.push_back(static_cast<Index>(j));
    }
    MatrixX<float> q(static_cast<Index>(rows.size()), queries.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) q.row(static_cast<Index>(i)) = queries.row(rows[i]);
    RecordingIdentification rec;
    rec.piece_id = piece;
    rec.rendering = static_cast<int>(r);
    rec.queries = q.rows();
    rec.result = identify_piece(index, q, votes_per_query);
    out.push_back(std::move(rec));
  }
  if (only_piece && out.empty()) throw std::invalid_argument("no recording of piece " + std::to_string(*only_piece));
  return out;
}

std::vector<PieceAlignment> align_split(const Model<float>& model, const Split& split, const SequenceConfig& seq,
                                        double reference_width, std::optional<int> only_piece) {
  std::vector<PieceAlignment> out;
  for (const auto& rendering : split.renderings) {
    if (only_piece && *only_piece != rendering.piece_id) continue;
    out.push_back(align_piece(model, split.piece(rendering.piece_id), rendering, seq, reference_width));
  }
  if (only_piece && out.empty()) throw std::invalid_argument("no recording of piece " + std::to_string(*only_piece));
  return out;
}

// --- ablation ---------------------------------------------------------------

namespace {

struct NamedRow {
  const char* name;
  AugmentToggles toggles;
};

// fields: image_scaling, dy_system, dx_note, multi_font, tempo_var
constexpr NamedRow kRows[] = {
    {"1synth_tempo", {false, false, false, false, true}},
    {"3synth_120", {false, false, false, true, false}},
    {"3synth_tempo", {false, false, false, true, true}},
    {"image_scaling", {true, false, false, false, false}},
    {"dy_system", {false, true, false, false, false}},
    {"dx_note", {false, false, true, false, false}},
    {"full_sheet", {true, true, true, false, false}},
    {"none", {false, false, false, false, false}},
    {"full", {true, true, true, true, true}},
};

template <typename T>
T median_of(std::vector<T> v) {
  std::sort(v.begin(), v.end());
  return v[(v.size() - 1) / 2];
}

}  // namespace

AugmentToggles ablation_row(const std::string& name) {
  for (const auto& r : kRows) {
    if (name == r.name) return r.toggles;
  }
  throw ConfigError("unknown ablation row '" + name + "'");
}

std::vector<std::string> ablation_row_names() {
  std::vector<std::string> out;
  for (const auto& r : kRows) out.emplace_back(r.name);
  return out;
}

void apply_toggles(RunConfig& cfg, const AugmentToggles& t) {
  cfg.image_scaling = t.image_scaling;
  cfg.dy_system = t.dy_system;
  cfg.dx_note = t.dx_note;
  cfg.multi_font = t.multi_font;
  cfg.tempo_var = t.tempo_var;
}

std::vector<AblationRun> run_ablation(const RunConfig& cfg, std::ostream* log) {
  for (const auto& row : cfg.ablate_rows) ablation_row(row);
  if (cfg.max_epochs < 1 && cfg.ablate_steps < 1) {
    throw ConfigError("ablation needs max_epochs or ablate_steps to bound each run");
  }
  std::vector<AblationRun> runs;
  for (const auto& row : cfg.ablate_rows) {
    for (int s = 0; s < cfg.ablate_seeds; ++s) {
      RunConfig run = cfg;
      apply_toggles(run, ablation_row(row));
      run.seed = cfg.seed + static_cast<std::uint64_t>(s);
      const Dataset data = build_dataset(dataset_config(run));
      TrainConfig tc = train_config(run);
      const int per_epoch = batches_per_epoch(data.train.pairs.size(), tc.batch_size);
      if (cfg.ablate_steps > 0) tc.max_epochs = (cfg.ablate_steps + per_epoch - 1) / per_epoch;
      const auto result = train(data, tc);
      AblationRun r;
      r.row = row;
      r.seed = run.seed;
      Model<float> best = result.best.model;
      r.metrics = summarize_ranks(retrieval_ranks(best, data.test), static_cast<Index>(data.test.snippets.size()));
      r.epochs = static_cast<int>(result.log.size());
      r.steps = static_cast<long>(r.epochs) * per_epoch;
      if (log) {
        *log << row << " seed " << r.seed << ": MR " << r.metrics.median << " R@1 " << r.metrics.r1 << " ("
             << r.epochs << " epochs, " << r.steps << " steps)\n";
        log->flush();
      }
      runs.push_back(r);
    }
  }
  return runs;
}

std::string ablation_csv(const std::vector<AblationRun>& runs) {
  std::ostringstream out;
  out << "row,seed,r1,r10,r25,mr,candidates,epochs,steps\n";
  char buf[200];
  for (const auto& r : runs) {
    std::snprintf(buf, sizeof(buf), "%s,%llu,%.2f,%.2f,%.2f,%ld,%ld,%d,%ld\n", r.row.c_str(),
                  static_cast<unsigned long long>(r.seed), r.metrics.r1, r.metrics.r10, r.metrics.r25,
                  static_cast<long>(r.metrics.median), static_cast<long>(r.metrics.candidates), r.epochs, r.steps);
    out << buf;
  }
  return out.str();
}

std::string ablation_summary_csv(const std::vector<AblationRun>& runs, const std::vector<std::string>& rows) {
  std::ostringstream out;
  out << "row,seeds,median_r1,median_r10,median_r25,median_mr\n";
  char buf[200];
  for (const auto& row : rows) {
    std::vector<double> r1, r10, r25;
    std::vector<Index> mr;
    for (const auto& r : runs) {
      if (r.row != row) continue;
      r1.push_back(r.metrics.r1);
      r10.push_back(r.metrics.r10);
      r25.push_back(r.metrics.r25);
      mr.push_back(r.metrics.median);
    }
    if (mr.empty()) continue;
    std::snprintf(buf, sizeof(buf), "%s,%zu,%.2f,%.2f,%.2f,%ld\n", row.c_str(), mr.size(), median_of(r1),
                  median_of(r10), median_of(r25), static_cast<long>(median_of(mr)));
    out << buf;
  }
  return out.str();
}

// --- subcommands ------------------------------------------------------------

namespace {

fs::path require_out(const RunConfig& cfg) {
  if (cfg.out.empty()) throw ConfigError("no output directory: set out in the config or pass --out");
  return cfg.out;
}

Dataset require_dataset(const RunConfig& cfg) {
  if (cfg.dataset.empty()) throw ConfigError("no dataset configured");
  if (!fs::is_directory(cfg.dataset) || !fs::exists(cfg.dataset / "manifest.json")) {
    throw ConfigError("dataset not found: " + cfg.dataset.string());
  }
  return read_dataset(cfg.dataset);
}

ModelCheckpoint require_checkpoint(const RunConfig& cfg) {
  if (cfg.checkpoint.empty()) throw ConfigError("no checkpoint configured");
  if (!fs::is_regular_file(cfg.checkpoint)) throw ConfigError("checkpoint not found: " + cfg.checkpoint.string());
  auto ckpt = load_checkpoint(cfg.checkpoint);
  if (ckpt.model.image.spec.height != kSnippetHeight || ckpt.model.image.spec.width != kSnippetWidth ||
      ckpt.model.audio.spec.height != kSpectrogramBins || ckpt.model.audio.spec.width != kExcerptFrames) {
    throw ConfigError("checkpoint input geometry does not match the dataset (" +
                      std::to_string(ckpt.model.image.spec.height) + "x" +
                      std::to_string(ckpt.model.image.spec.width) + " / " +
                      std::to_string(ckpt.model.audio.spec.height) + "x" +
                      std::to_string(ckpt.model.audio.spec.width) + ")");
  }
  return ckpt;
}

void write_effective_config(const RunConfig& cfg, const fs::path& dir) {
  write_text(dir / "run.conf", to_text(cfg));
}

std::string metrics_json(const RetrievalMetrics& m) {
  nlohmann::json j;
  j["r1"] = m.r1;
  j["r10"] = m.r10;
  j["r25"] = m.r25;
  j["mr"] = m.median;
  j["candidates"] = m.candidates;
  j["queries"] = m.queries;
  return j.dump(1) + "\n";
}

}  // namespace

void run_gen_data(const RunConfig& cfg, const CommandOptions& opts, std::ostream& log) {
  const auto out = require_out(cfg);
  const DatasetConfig dc = dataset_config(cfg);
  prepare_output_dir(out, opts.force);
  const Dataset data = build_dataset(dc);
  write_dataset(data, out);
  write_effective_config(cfg, out);
  for (const Split* s : {&data.train, &data.val, &data.test}) {
    log << s->name << ": " << s->pieces.size() << " pieces, " << s->fonts.size() << " fonts, " << s->tempos.size()
        << " tempos, " << s->pairs.size() << " pairs\n";
  }
}

void run_train(const RunConfig& cfg, const CommandOptions& opts, std::ostream& log) {
  const auto out = require_out(cfg);
  const Dataset data = require_dataset(cfg);
  const TrainConfig tc = train_config(cfg);
  std::optional<ModelCheckpoint> resume;
  std::vector<std::string> previous;
  if (opts.resume) {
    const fs::path from = cfg.checkpoint.empty() ? out / "last.bin" : cfg.checkpoint;
    if (!fs::is_regular_file(from)) throw ConfigError("nothing to resume: " + from.string() + " not found");
    resume = load_checkpoint(from);
    if (!resume->training) throw ConfigError(from.string() + " carries no optimizer state");
    if (fs::exists(out / "metrics.csv")) {
      std::istringstream in(read_text(out / "metrics.csv"));
      std::string line;
      std::getline(in, line);
      while (std::getline(in, line)) {
        if (!line.empty() && std::stoi(line) <= static_cast<int>(resume->epoch)) previous.push_back(line);
      }
    }
    fs::create_directories(out);
  } else {
    prepare_output_dir(out, opts.force);
  }
  write_effective_config(cfg, out);

  auto trainer = resume ? Trainer(data, tc, *resume) : Trainer(data, tc);
  std::vector<EpochRecord> log_rows;
  auto flush_metrics = [&] {
    std::string csv = metrics_csv(log_rows);
    std::string head = csv.substr(0, csv.find('\n') + 1);
    std::string body = csv.substr(head.size());
    std::string text = head;
    for (const auto& l : previous) text += l + "\n";
    write_text(out / "metrics.csv", text + body);
  };
  log << "training " << data.train.pairs.size() << " pairs, " << trainer.steps_per_epoch()
      << " steps per epoch, starting after epoch " << trainer.epoch() << "\n";
  while (!trainer.finished()) {
    const auto rec = trainer.run_epoch();
    log_rows.push_back(rec);
    if (rec.improved) save_checkpoint(trainer.best(), out / "checkpoint.bin");
    save_checkpoint(trainer.checkpoint(), out / "last.bin");
    flush_metrics();
    char buf[160];
    std::snprintf(buf, sizeof(buf), "epoch %d  train %.5f  val %.5f  lr %.6g%s\n", rec.epoch, rec.train_loss,
                  rec.val_loss, rec.lr, rec.improved ? "  *" : "");
    log << buf;
    log.flush();
  }
  if (!fs::exists(out / "checkpoint.bin")) save_checkpoint(trainer.best(), out / "checkpoint.bin");
  flush_metrics();
}

void run_eval_retrieval(const RunConfig& cfg, const CommandOptions& opts, std::ostream& log) {
  const auto out = require_out(cfg);
  const Dataset data = require_dataset(cfg);
  std::optional<ModelCheckpoint> ckpt;
  if (!opts.random_baseline) ckpt = require_checkpoint(cfg);
  prepare_output_dir(out, opts.force);
  write_effective_config(cfg, out);

  const Split& test = data.test;
  EmbeddingIndex index;
  MatrixX<float> queries;
  std::vector<Index> targets = snippet_targets(test);
  if (opts.random_baseline) {
    index.embeddings = random_embeddings(static_cast<Index>(test.snippets.size()), kEmbeddingDim,
                                         derive_seed(cfg.seed, "random/index"));
    for (const auto& piece : test.pieces) {
      for (std::size_t n = 0; n < piece.note_x.size(); ++n) {
        index.piece_ids.push_back(piece.piece.id);
        index.note_indices.push_back(static_cast<int>(n));
      }
    }
    queries = random_embeddings(static_cast<Index>(test.pairs.size()), kEmbeddingDim,
                                derive_seed(cfg.seed, "random/query"));
  } else {
    index = snippet_index(ckpt->model, test);
    queries = excerpt_queries(ckpt->model, test);
  }
  if (opts.oracle) {
    queries = index.embeddings;
    targets.resize(static_cast<std::size_t>(index.size()));
    for (Index i = 0; i < index.size(); ++i) targets[static_cast<std::size_t>(i)] = i;
  }
  const auto ranks = true_ranks(index, queries, targets);
  const auto m = summarize_ranks(ranks, index.size());
  save_index(index, out / "index");
  write_text(out / "ranks.csv", ranks_csv(ranks));
  write_text(out / "metrics.json", metrics_json(m));
  char buf[200];
  std::snprintf(buf, sizeof(buf), "%s: %ld queries, %ld candidates\nR@1 %.2f  R@10 %.2f  R@25 %.2f  MR %ld\n",
                opts.random_baseline ? "random baseline" : (opts.oracle ? "oracle" : "model"),
                static_cast<long>(m.queries), static_cast<long>(m.candidates), m.r1, m.r10, m.r25,
                static_cast<long>(m.median));
  log << buf;
}

void run_identify(const RunConfig& cfg, const CommandOptions& opts, std::ostream& log) {
  const auto out = require_out(cfg);
  const Dataset data = require_dataset(cfg);
  Model<float> model;
  if (cfg.checkpoint.empty()) {
    log << "no checkpoint configured: using an untrained model\n";
    model = make_model<float>(cfg.kappa, derive_seed(cfg.seed, "init"));
  } else {
    model = require_checkpoint(cfg).model;
  }
  prepare_output_dir(out, opts.force);
  write_effective_config(cfg, out);

  const auto results = identify_recordings(model, data.test, cfg.votes_per_query, opts.piece);
  std::ostringstream csv;
  csv << "recording,true_piece,rank,piece_id,votes\n";
  for (const auto& rec : results) {
    const auto& ranking = rec.result.ranking;
    log << "recording " << rec.rendering << " (piece " << rec.piece_id << ", " << rec.queries
        << " queries): true piece at R" << rec.result.rank_of(rec.piece_id) << "\n";
    for (std::size_t i = 0; i < ranking.size(); ++i) {
      csv << rec.rendering << "," << rec.piece_id << "," << i + 1 << "," << ranking[i].piece_id << ","
          << ranking[i].votes << "\n";
      log << "  " << i + 1 << ". piece " << ranking[i].piece_id << "  " << ranking[i].votes << " votes\n";
    }
    log << "  total " << rec.result.total_votes << " votes\n";
  }
  write_text(out / "identify.csv", csv.str());
}

void run_align(const RunConfig& cfg, const CommandOptions& opts, std::ostream& log) {
  const auto out = require_out(cfg);
  const Dataset data = require_dataset(cfg);
  const auto ckpt = require_checkpoint(cfg);
  prepare_output_dir(out, opts.force);
  write_effective_config(cfg, out);

  const SequenceConfig seq{cfg.hop_img, cfg.hop_aud};
  const auto results = align_split(ckpt.model, data.test, seq, cfg.reference_width, opts.piece);
  std::vector<std::pair<std::string, std::vector<WindowError>>> box;
  std::vector<WindowError> all_dtw;
  std::vector<WindowError> all_linear;
  for (const auto& r : results) {
    const std::string stem = "piece_" + std::to_string(r.piece_id);
    write_text(out / (stem + "_dtw.csv"), errors_csv(r.dtw_errors));
    write_text(out / (stem + "_linear.csv"), errors_csv(r.linear_errors));
    write_text(out / (stem + "_summary.json"), "{\"dtw\":" + summary_json(r.dtw_summary) +
                                                   ",\"linear\":" + summary_json(r.linear_summary) + "}\n");
    if (opts.matrix_dump) write_text(out / (stem + "_cost.txt"), matrix_text(r.cost));
    all_dtw.insert(all_dtw.end(), r.dtw_errors.begin(), r.dtw_errors.end());
    all_linear.insert(all_linear.end(), r.linear_errors.begin(), r.linear_errors.end());
    char buf[200];
    std::snprintf(buf, sizeof(buf), "piece %d: %ldx%ld cost matrix  median error dtw %.4f  linear %.4f\n",
                  r.piece_id, static_cast<long>(r.cost.rows()), static_cast<long>(r.cost.cols()),
                  r.dtw_summary.median, r.linear_summary.median);
    log << buf;
  }
  box.emplace_back("linear", all_linear);
  box.emplace_back("dtw", all_dtw);
  write_text(out / "boxplot.dat", boxplot_data(box));
}

void run_ablate(const RunConfig& cfg, const CommandOptions& opts, std::ostream& log) {
  const auto out = require_out(cfg);
  for (const auto& row : cfg.ablate_rows) ablation_row(row);
  prepare_output_dir(out, opts.force);
  write_effective_config(cfg, out);
  const auto runs = run_ablation(cfg, &log);
  write_text(out / "ablation.csv", ablation_csv(runs));
  const auto summary = ablation_summary_csv(runs, cfg.ablate_rows);
  write_text(out / "ablation_summary.csv", summary);
  log << summary;
}

}  // namespace cmscore
