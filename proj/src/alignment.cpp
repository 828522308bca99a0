#include "cmscore/alignment.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace cmscore {

double interpolate_position(const std::vector<int>& note_x, const std::vector<int>& onset_frames, double frame) {
  if (note_x.empty() || note_x.size() != onset_frames.size()) {
    throw std::invalid_argument("interpolate_position: need one onset per note");
  }
  if (frame <= onset_frames.front()) return note_x.front();
  if (frame >= onset_frames.back()) return note_x.back();
  const auto hi = static_cast<std::size_t>(
      std::upper_bound(onset_frames.begin(), onset_frames.end(), frame) - onset_frames.begin());
  const std::size_t lo = hi - 1;
  const double f0 = onset_frames[lo];
  const double f1 = onset_frames[hi];
  if (f1 == f0) return note_x[hi];
  const double t = (frame - f0) / (f1 - f0);
  return note_x[lo] + t * (note_x[hi] - note_x[lo]);
}

AlignmentSequences build_sequences(const Image& staff, const Spectrogram& spectrogram,
                                   const std::vector<int>& note_x, const std::vector<int>& onset_frames,
                                   const SequenceConfig& cfg) {
  if (cfg.hop_img < 1 || cfg.hop_aud < 1) throw std::invalid_argument("build_sequences: hops must be >= 1");
  if (staff.rows() != kSnippetHeight || staff.cols() < kSnippetWidth) {
    throw std::invalid_argument("build_sequences: staff " + std::to_string(staff.rows()) + "x" +
                                std::to_string(staff.cols()) + " is shorter than one 180x200 window");
  }
  if (spectrogram.rows() != kSpectrogramBins || spectrogram.cols() < 1) {
    throw std::invalid_argument("build_sequences: spectrogram has no frames or wrong bin count");
  }
  AlignmentSequences seq;
  const Index image_count = (staff.cols() - kSnippetWidth) / cfg.hop_img + 1;
  for (Index k = 0; k < image_count; ++k) {
    const Index left = k * cfg.hop_img;
    seq.image_windows.emplace_back(staff.middleCols(left, kSnippetWidth));
    seq.image_centers.push_back(static_cast<int>(left + kSnippetWidth / 2));
  }
  const Index audio_count = (spectrogram.cols() - 1) / cfg.hop_aud + 1;
  for (Index w = 0; w < audio_count; ++w) {
    const int frame = static_cast<int>(w * cfg.hop_aud);
    seq.audio_windows.push_back(excerpt_at(spectrogram, frame));
    seq.audio_frames.push_back(frame);
    seq.true_x.push_back(interpolate_position(note_x, onset_frames, frame));
  }
  return seq;
}

CostMatrix cost_matrix(const MatrixX<float>& image_embeddings, const MatrixX<float>& audio_embeddings) {
  require_shape(image_embeddings.rows() > 0 && audio_embeddings.rows() > 0, "cost_matrix: empty sequence");
  require_shape(image_embeddings.cols() == audio_embeddings.cols(), "cost_matrix: embedding widths differ");
  const MatrixX<double> x = image_embeddings.cast<double>();
  const MatrixX<double> y = audio_embeddings.cast<double>();
  CostMatrix c = (1.0 - (x * y.transpose()).array()).matrix();
  return c.cwiseMax(0.0).cwiseMin(2.0);
}

DtwResult dtw(const CostMatrix& cost) {
  const Index R = cost.rows();
  const Index C = cost.cols();
  if (R < 1 || C < 1) throw std::invalid_argument("dtw: empty cost matrix");
  // g(i, j): cheapest cost of reaching (R-1, C-1) from (i, j), inclusive.
  constexpr double kInf = std::numeric_limits<double>::infinity();
  MatrixX<double> g = MatrixX<double>::Constant(R + 1, C + 1, kInf);
  g(R - 1, C - 1) = cost(R - 1, C - 1);
  for (Index i = R - 1; i >= 0; --i) {
    for (Index j = C - 1; j >= 0; --j) {
      if (i == R - 1 && j == C - 1) continue;
      g(i, j) = cost(i, j) + std::min({g(i + 1, j + 1), g(i + 1, j), g(i, j + 1)});
    }
  }
  DtwResult out;
  out.cost = g(0, 0);
  Index i = 0;
  Index j = 0;
  out.path.emplace_back(0, 0);
  while (i != R - 1 || j != C - 1) {
    const double diag = g(i + 1, j + 1);
    const double down = g(i + 1, j);
    const double right = g(i, j + 1);
    if (diag <= down && diag <= right) {
      ++i;
      ++j;
    } else if (down <= right) {
      ++i;
    } else {
      ++j;
    }
    out.path.emplace_back(i, j);
  }
  return out;
}

AlignmentPath linear_baseline(Index rows, Index cols) {
  if (rows < 1 || cols < 1) throw std::invalid_argument("linear_baseline: sizes must be >= 1");
  auto target = [&](Index c) -> Index {
    if (cols == 1) return 0;
    const Index num = c * (rows - 1);
    const Index den = cols - 1;
    return (2 * num + den) / (2 * den);
  };
  AlignmentPath path{{0, 0}};
  Index r = 0;
  for (Index c = 1; c < cols; ++c) {
    const Index t = target(c);
    if (t > r) ++r;
    path.emplace_back(r, c);
    while (r < t) path.emplace_back(++r, c);
  }
  while (r < rows - 1) path.emplace_back(++r, cols - 1);
  return path;
}

double path_cost(const CostMatrix& cost, const AlignmentPath& path) {
  double total = 0.0;
  for (const auto& [r, c] : path) total += cost(r, c);
  return total;
}

void validate_path(const AlignmentPath& path, Index rows, Index cols) {
  if (path.empty()) throw std::invalid_argument("empty alignment path");
  if (path.front() != std::pair<Index, Index>{0, 0}) throw std::invalid_argument("path does not start at (0,0)");
  if (path.back() != std::pair<Index, Index>{rows - 1, cols - 1}) {
    throw std::invalid_argument("path does not end at the last cell");
  }
  for (std::size_t k = 1; k < path.size(); ++k) {
    const Index dr = path[k].first - path[k - 1].first;
    const Index dc = path[k].second - path[k - 1].second;
    if (dr < 0 || dr > 1 || dc < 0 || dc > 1 || dr + dc == 0) {
      throw std::invalid_argument("invalid path step at position " + std::to_string(k));
    }
  }
}

std::vector<WindowError> alignment_error(const AlignmentPath& path, const std::vector<int>& image_centers,
                                         const std::vector<double>& true_x, double reference_width) {
  if (!(reference_width > 0)) throw std::invalid_argument("reference width must be positive");
  const auto cols = static_cast<Index>(true_x.size());
  std::vector<std::vector<Index>> rows(true_x.size());
  for (const auto& [r, c] : path) {
    if (c < 0 || c >= cols || r < 0 || r >= static_cast<Index>(image_centers.size())) {
      throw std::out_of_range("alignment path cell outside the sequences");
    }
    rows[static_cast<std::size_t>(c)].push_back(r);
  }
  std::vector<WindowError> out;
  for (Index c = 0; c < cols; ++c) {
    auto& matched = rows[static_cast<std::size_t>(c)];
    if (matched.empty()) throw std::invalid_argument("audio window " + std::to_string(c) + " is not on the path");
    std::sort(matched.begin(), matched.end());
    const Index row = matched[(matched.size() - 1) / 2];
    WindowError e;
    e.audio_window = c;
    e.true_x = true_x[static_cast<std::size_t>(c)];
    e.est_x = image_centers[static_cast<std::size_t>(row)];
    e.norm_error = std::abs(e.est_x - e.true_x) / reference_width;
    out.push_back(e);
  }
  return out;
}

double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw std::invalid_argument("quantile of an empty set");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

ErrorSummary summarize_errors(const std::vector<WindowError>& errors) {
  std::vector<double> v;
  for (const auto& e : errors) v.push_back(e.norm_error);
  ErrorSummary s;
  s.median = quantile(v, 0.5);
  s.q1 = quantile(v, 0.25);
  s.q3 = quantile(v, 0.75);
  s.max = *std::max_element(v.begin(), v.end());
  return s;
}

PieceAlignment align_piece(const Model<float>& model, const PieceRecord& piece, const Rendering& rendering,
                           const SequenceConfig& cfg, double reference_width) {
  if (rendering.piece_id != piece.piece.id) throw std::invalid_argument("rendering belongs to another piece");
  const auto seq = build_sequences(piece.staff, rendering.spec, piece.note_x, rendering.onset_frames, cfg);
  const MatrixX<float> x = embed_image(model, stack_images(seq.image_windows));
  const MatrixX<float> y = embed_audio(model, stack_spectrograms(seq.audio_windows));
  PieceAlignment out;
  out.piece_id = piece.piece.id;
  out.cost = cost_matrix(x, y);
  out.dtw = dtw(out.cost);
  out.linear = linear_baseline(out.cost.rows(), out.cost.cols());
  out.dtw_errors = alignment_error(out.dtw.path, seq.image_centers, seq.true_x, reference_width);
  out.linear_errors = alignment_error(out.linear, seq.image_centers, seq.true_x, reference_width);
  out.dtw_summary = summarize_errors(out.dtw_errors);
  out.linear_summary = summarize_errors(out.linear_errors);
  return out;
}

std::string errors_csv(const std::vector<WindowError>& errors) {
  std::ostringstream out;
  out << "audio_window,true_x,est_x,norm_error\n";
  char buf[160];
  for (const auto& e : errors) {
    std::snprintf(buf, sizeof(buf), "%ld,%.6f,%.6f,%.9g\n", static_cast<long>(e.audio_window), e.true_x, e.est_x,
                  e.norm_error);
    out << buf;
  }
  return out.str();
}

std::string summary_json(const ErrorSummary& s) {
  nlohmann::json j;
  j["median"] = s.median;
  j["q1"] = s.q1;
  j["q3"] = s.q3;
  j["max"] = s.max;
  return j.dump();
}

std::string boxplot_data(const std::vector<std::pair<std::string, std::vector<WindowError>>>& methods) {
  std::ostringstream out;
  out << "# method_index norm_error;";
  for (std::size_t m = 0; m < methods.size(); ++m) out << " " << m << "=" << methods[m].first;
  out << "\n";
  char buf[64];
  for (std::size_t m = 0; m < methods.size(); ++m) {
    for (const auto& e : methods[m].second) {
      std::snprintf(buf, sizeof(buf), "%zu %.9g\n", m, e.norm_error);
      out << buf;
    }
  }
  return out.str();
}

std::string matrix_text(const CostMatrix& cost) {
  std::ostringstream out;
  char buf[32];
  for (Index r = 0; r < cost.rows(); ++r) {
    for (Index c = 0; c < cost.cols(); ++c) {
      std::snprintf(buf, sizeof(buf), c == 0 ? "%.6f" : " %.6f", cost(r, c));
      out << buf;
    }
    out << "\n";
  }
  return out.str();
}

}  // namespace cmscore
