#pragma once

#include "cmscore/model.hpp"
#include "cmscore/synthdata.hpp"

#include <string>
#include <utility>
#include <vector>

namespace cmscore {

using CostMatrix = MatrixX<double>;
using AlignmentPath = std::vector<std::pair<Index, Index>>;  // (row, col)

struct SequenceConfig {
  int hop_img = 50;  // px between image window starts
  int hop_aud = 10;  // frames between audio window anchors
};

/// Image windows slide over the staff; audio window w is the excerpt
/// anchored at frame w * hop_aud, padded with silence past either end. true_x is the sheet
/// position at each audio anchor, interpolated linearly between onsets.
struct AlignmentSequences {
  std::vector<Image> image_windows;
  std::vector<int> image_centers;
  std::vector<Spectrogram> audio_windows;
  std::vector<int> audio_frames;
  std::vector<double> true_x;
};

AlignmentSequences build_sequences(const Image& staff, const Spectrogram& spectrogram,
                                   const std::vector<int>& note_x, const std::vector<int>& onset_frames,
                                   const SequenceConfig& cfg = {});

/// Sheet x-pixel at a frame: note positions interpolated between onset
/// frames, clamped outside the first and last onset.
double interpolate_position(const std::vector<int>& note_x, const std::vector<int>& onset_frames, double frame);

/// Entry (r, c) = 1 - x_r . y_c, clamped to [0, 2].
CostMatrix cost_matrix(const MatrixX<float>& image_embeddings, const MatrixX<float>& audio_embeddings);

struct DtwResult {
  AlignmentPath path;
  double cost = 0.0;
};

/// Minimum-cost monotone path from (0,0) to (R-1,C-1) with steps (1,0),
/// (0,1), (1,1). Ties are resolved diagonal first, then row step, then column
/// step while reading the path from the start.
DtwResult dtw(const CostMatrix& cost);

/// Column c maps to row round(c (R-1) / (C-1)), halves rounded up, joined
/// into a valid path.
AlignmentPath linear_baseline(Index rows, Index cols);

double path_cost(const CostMatrix& cost, const AlignmentPath& path);
/// Throws unless the path starts at (0,0), ends at (R-1,C-1) and only uses
/// unit steps.
void validate_path(const AlignmentPath& path, Index rows, Index cols);

struct WindowError {
  Index audio_window = 0;
  double true_x = 0;
  double est_x = 0;
  double norm_error = 0;
};

struct ErrorSummary {
  double median = 0;
  double q1 = 0;
  double q3 = 0;
  double max = 0;
};

/// Per audio window: the estimated position is the center of the matched
/// image window (the lower median row when several rows match).
std::vector<WindowError> alignment_error(const AlignmentPath& path, const std::vector<int>& image_centers,
                                         const std::vector<double>& true_x, double reference_width = 835.0);

/// Quartiles use linear interpolation between order statistics.
double quantile(std::vector<double> values, double q);
ErrorSummary summarize_errors(const std::vector<WindowError>& errors);

struct PieceAlignment {
  int piece_id = 0;
  CostMatrix cost;
  DtwResult dtw;
  AlignmentPath linear;
  std::vector<WindowError> dtw_errors;
  std::vector<WindowError> linear_errors;
  ErrorSummary dtw_summary;
  ErrorSummary linear_summary;
};

PieceAlignment align_piece(const Model<float>& model, const PieceRecord& piece, const Rendering& rendering,
                           const SequenceConfig& cfg = {}, double reference_width = 835.0);

/// `audio_window,true_x,est_x,norm_error`
std::string errors_csv(const std::vector<WindowError>& errors);
/// {"median":..,"q1":..,"q3":..,"max":..}
std::string summary_json(const ErrorSummary& s);
/// Two columns (method index, error) with a comment naming the methods.
std::string boxplot_data(const std::vector<std::pair<std::string, std::vector<WindowError>>>& methods);
/// Whitespace-separated rows of the matrix.
std::string matrix_text(const CostMatrix& cost);

}  // namespace cmscore
