#include "cmscore/synthdata.hpp"

#include "cmscore/rng.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

namespace cmscore {

double SymbolicPiece::onset_beats(std::size_t note) const {
  double beats = 0.0;
  for (std::size_t i = 0; i < note && i < notes.size(); ++i) beats += notes[i].beats;
  return beats;
}

double SymbolicPiece::total_beats() const { return onset_beats(notes.size()); }

SoundFontProfile sound_font(int id) {
  switch (id) {
    case 0: return {0, 0.60, 4, 0.02, 20.0, 0.00};
    case 1: return {1, 0.80, 3, 0.00, 8.0, 0.30};
    case 2: return {2, 0.45, 5, 0.05, 40.0, 0.15};
    case kTestFontId: return {kTestFontId, 0.70, 4, 0.03, 14.0, 0.20};
    default: throw std::invalid_argument("unknown sound font id " + std::to_string(id));
  }
}

SymbolicPiece gen_piece(std::uint64_t seed, int note_count, int pitch_range, int id) {
  if (note_count < 1) throw std::invalid_argument("a piece needs at least one note");
  if (pitch_range < 1) throw std::invalid_argument("pitch range must be positive");
  static constexpr double kDurations[] = {0.5, 1.0, 1.0, 2.0};
  Rng rng(seed);
  SymbolicPiece piece;
  piece.id = id;
  piece.notes.reserve(static_cast<std::size_t>(note_count));
  for (int i = 0; i < note_count; ++i) {
    const int pitch = static_cast<int>(rng.integer(0, pitch_range - 1));
    const double beats = kDurations[rng.integer(0, 3)];
    piece.notes.push_back({pitch, beats});
  }
  return piece;
}

int onset_frame(double beats, double tempo_bpm) {
  return static_cast<int>(std::lround(beats * 60.0 / tempo_bpm * kFramesPerSecond));
}

// --- sheet side ------------------------------------------------------------

int pitch_to_y(int pitch, const StaffLayout& layout) {
  // pitch 0 sits one line spacing below the bottom staff line
  const int bottom = layout.staff_center + 2 * layout.line_spacing;
  return bottom + layout.line_spacing - pitch * layout.line_spacing / 2;
}

StaffRender render_unrolled_staff(const SymbolicPiece& piece) {
  const StaffLayout& lay = piece.layout;
  const int n = static_cast<int>(piece.notes.size());
  const int width = 2 * lay.margin + std::max(0, n - 1) * lay.note_spacing + 1;
  StaffRender out;
  out.image = Image::Ones(lay.height, width);
  for (int k = -2; k <= 2; ++k) {
    out.image.row(lay.staff_center + k * lay.line_spacing).setConstant(lay.line_value);
  }
  const int ry = static_cast<int>(std::ceil(lay.head_ry));
  const int rx = static_cast<int>(std::ceil(lay.head_rx));
  for (int i = 0; i < n; ++i) {
    const int x = lay.margin + i * lay.note_spacing;
    const int y = pitch_to_y(piece.notes[static_cast<std::size_t>(i)].pitch, lay);
    out.note_x.push_back(x);
    out.note_y.push_back(y);
    for (int r = y - ry; r <= y + ry; ++r) {
      if (r < 0 || r >= lay.height) continue;
      for (int c = x - rx; c <= x + rx; ++c) {
        const double u = (c - x) / lay.head_rx;
        const double v = (r - y) / lay.head_ry;
        if (u * u + v * v <= 1.0) out.image(r, c) = lay.head_value;
      }
    }
  }
  return out;
}

namespace {

float sample_bilinear(const Image& img, double r, double c) {
  const double r0 = std::floor(r);
  const double c0 = std::floor(c);
  const double fr = r - r0;
  const double fc = c - c0;
  auto at = [&](double rr, double cc) -> double {
    if (rr < 0 || cc < 0 || rr >= static_cast<double>(img.rows()) || cc >= static_cast<double>(img.cols())) {
      return 1.0;
    }
    return img(static_cast<Index>(rr), static_cast<Index>(cc));
  };
  const double top = (1.0 - fc) * at(r0, c0) + fc * (fc > 0.0 ? at(r0, c0 + 1) : 0.0);
  if (fr == 0.0) return static_cast<float>(top);
  const double bottom = (1.0 - fc) * at(r0 + 1, c0) + fc * (fc > 0.0 ? at(r0 + 1, c0 + 1) : 0.0);
  return static_cast<float>((1.0 - fr) * top + fr * bottom);
}

void check_augment(const AugmentParams& aug) {
  if (!(aug.scale >= 0.95 - 1e-12 && aug.scale <= 1.05 + 1e-12)) {
    throw std::invalid_argument("augmentation scale " + std::to_string(aug.scale) +
                                " outside [0.95, 1.05]");
  }
  if (aug.dy < -5 || aug.dy > 5) {
    throw std::invalid_argument("augmentation dy " + std::to_string(aug.dy) + " outside [-5, 5]");
  }
  if (aug.dx < -5 || aug.dx > 5) {
    throw std::invalid_argument("augmentation dx " + std::to_string(aug.dx) + " outside [-5, 5]");
  }
}

}  // namespace

Image cut_sheet_snippet(const Image& staff, int note_x, const AugmentParams& aug) {
  check_augment(aug);
  const double cy = (kSnippetHeight - 1) / 2.0;
  const double half = kSnippetWidth / 2.0;
  Image out(kSnippetHeight, kSnippetWidth);
  for (Index r = 0; r < kSnippetHeight; ++r) {
    const double sr = cy + (static_cast<double>(r - aug.dy) - cy) / aug.scale;
    for (Index c = 0; c < kSnippetWidth; ++c) {
      const double sc = note_x + aug.dx + (static_cast<double>(c) - half) / aug.scale;
      out(r, c) = sample_bilinear(staff, sr, sc);
    }
  }
  return out;
}

Image augment_image(const Image& snippet, const AugmentParams& aug) {
  check_augment(aug);
  require_shape(snippet.rows() == kSnippetHeight && snippet.cols() == kSnippetWidth,
                "augment_image: snippet must be 180x200");
  const double cy = (kSnippetHeight - 1) / 2.0;
  const double cx = (kSnippetWidth - 1) / 2.0;
  Image out(kSnippetHeight, kSnippetWidth);
  for (Index r = 0; r < kSnippetHeight; ++r) {
    const double sr = cy + (static_cast<double>(r - aug.dy) - cy) / aug.scale;
    for (Index c = 0; c < kSnippetWidth; ++c) {
      const double sc = cx + (static_cast<double>(c + aug.dx) - cx) / aug.scale;
      out(r, c) = sample_bilinear(snippet, sr, sc);
    }
  }
  return out;
}

// --- audio side ------------------------------------------------------------

int fundamental_bin(int pitch) { return 6 + 4 * pitch; }

SpectrogramRender render_spectrogram(const SymbolicPiece& piece, const SoundFontProfile& font) {
  const int frames = onset_frame(piece.total_beats(), piece.tempo_bpm) + 1;
  Eigen::MatrixXd mag = Eigen::MatrixXd::Zero(kSpectrogramBins, frames);
  std::vector<bool> sounding(static_cast<std::size_t>(frames), false);
  SpectrogramRender out;
  double beats = 0.0;
  for (const auto& note : piece.notes) {
    const int on = onset_frame(beats, piece.tempo_bpm);
    const int off = std::max(on + 1, onset_frame(beats + note.beats, piece.tempo_bpm));
    out.onset_frames.push_back(on);
    beats += note.beats;
    const int f0 = fundamental_bin(note.pitch);
    for (int t = on; t < std::min(off, frames); ++t) {
      sounding[static_cast<std::size_t>(t)] = true;
      const double env = std::exp(-(t - on) / font.decay_frames);
      double amp = 1.0;
      for (int h = 1; h <= font.harmonics; ++h, amp *= font.rolloff) {
        const int bin = h * f0;
        if (bin >= kSpectrogramBins) break;
        mag(bin, t) += amp * env;
        if (font.spread > 0.0) {
          if (bin > 0) mag(bin - 1, t) += font.spread * amp * env;
          if (bin + 1 < kSpectrogramBins) mag(bin + 1, t) += font.spread * amp * env;
        }
      }
    }
  }
  for (int t = 0; t < frames; ++t) {
    if (sounding[static_cast<std::size_t>(t)]) mag.col(t).array() += font.noise_floor;
  }
  out.spec = (10.0 * mag.array()).log1p().cast<float>().max(0.0F).matrix();
  return out;
}

Spectrogram excerpt_ending_at(const Spectrogram& full, int end_frame) {
  Spectrogram out = Spectrogram::Zero(kSpectrogramBins, kExcerptFrames);
  const int first = end_frame - static_cast<int>(kExcerptFrames) + 1;
  for (int k = 0; k < kExcerptFrames; ++k) {
    const int t = first + k;
    if (t >= 0 && t < full.cols()) out.col(k) = full.col(t);
  }
  return out;
}

Spectrogram excerpt_at(const Spectrogram& full, int anchor_frame) {
  return excerpt_ending_at(full, anchor_frame + kExcerptLead);
}

Spectrogram render_spectrogram_excerpt(const SymbolicPiece& piece, std::size_t note,
                                       const SoundFontProfile& font) {
  if (note >= piece.notes.size()) throw std::out_of_range("note index out of range");
  const auto render = render_spectrogram(piece, font);
  return excerpt_at(render.spec, render.onset_frames[note]);
}

// --- dataset ---------------------------------------------------------------

const PieceRecord& Split::piece(int id) const {
  for (const auto& p : pieces) {
    if (p.piece.id == id) return p;
  }
  throw std::out_of_range("split " + name + " has no piece " + std::to_string(id));
}

std::vector<int> Split::piece_ids() const {
  std::vector<int> ids;
  for (const auto& p : pieces) ids.push_back(p.piece.id);
  return ids;
}

namespace {

Split build_split(const std::string& name, const std::vector<int>& ids, const DatasetConfig& cfg,
                  std::vector<int> fonts, std::vector<double> tempos) {
  Split split;
  split.name = name;
  split.fonts = std::move(fonts);
  split.tempos = std::move(tempos);
  for (int id : ids) {
    PieceRecord rec;
    rec.piece = gen_piece(derive_seed(cfg.seed, "piece", static_cast<std::uint64_t>(id)),
                          cfg.notes_per_piece, cfg.pitch_range, id);
    auto staff = render_unrolled_staff(rec.piece);
    rec.staff = std::move(staff.image);
    rec.note_x = std::move(staff.note_x);
    const int first_snippet = static_cast<int>(split.snippets.size());
    for (int x : rec.note_x) split.snippets.push_back(cut_sheet_snippet(rec.staff, x));
    for (int font : split.fonts) {
      for (double tempo : split.tempos) {
        SymbolicPiece timed = rec.piece;
        timed.tempo_bpm = tempo;
        auto render = render_spectrogram(timed, sound_font(font));
        const int rendering = static_cast<int>(split.renderings.size());
        for (std::size_t n = 0; n < rec.note_x.size(); ++n) {
          CorrespondencePair pair;
          pair.piece_id = id;
          pair.note_index = static_cast<int>(n);
          pair.snippet = first_snippet + static_cast<int>(n);
          pair.rendering = rendering;
          pair.font = font;
          pair.tempo = tempo;
          pair.x_pixel = rec.note_x[n];
          pair.onset_frame = render.onset_frames[n];
          split.pairs.push_back(pair);
          split.excerpts.push_back(excerpt_at(render.spec, pair.onset_frame));
        }
        split.renderings.push_back({id, font, tempo, std::move(render.spec), std::move(render.onset_frames)});
      }
    }
    split.pieces.push_back(std::move(rec));
  }
  return split;
}

std::vector<int> consecutive(int start, int count) {
  std::vector<int> ids(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) ids[static_cast<std::size_t>(i)] = start + i;
  return ids;
}

}  // namespace

void check_disjoint(const Dataset& data) {
  std::set<int> seen;
  for (const Split* split : {&data.train, &data.val, &data.test}) {
    for (int id : split->piece_ids()) {
      if (!seen.insert(id).second) {
        throw std::invalid_argument("piece id " + std::to_string(id) + " appears in more than one split");
      }
    }
  }
}

Dataset build_dataset(const DatasetConfig& config) {
  if (config.notes_per_piece < 1) throw std::invalid_argument("notes_per_piece must be >= 1");
  Dataset data;
  data.config = config;
  auto train_ids = config.train_ids.empty() ? consecutive(0, config.train_pieces) : config.train_ids;
  auto val_ids = config.val_ids.empty() ? consecutive(static_cast<int>(train_ids.size()), config.val_pieces)
                                        : config.val_ids;
  auto test_ids = config.test_ids.empty()
                      ? consecutive(static_cast<int>(train_ids.size() + val_ids.size()), config.test_pieces)
                      : config.test_ids;
  data.config.train_ids = train_ids;
  data.config.val_ids = val_ids;
  data.config.test_ids = test_ids;
  {
    // reject overlaps before rendering anything
    std::set<int> seen;
    for (const auto* ids : {&train_ids, &val_ids, &test_ids}) {
      for (int id : *ids) {
        if (!seen.insert(id).second) {
          throw std::invalid_argument("piece id " + std::to_string(id) + " appears in more than one split");
        }
      }
    }
  }
  std::vector<int> train_fonts = config.multi_font ? std::vector<int>{0, 1, 2} : std::vector<int>{0};
  std::vector<double> train_tempos = config.tempo_var
                                         ? std::vector<double>(kTempoGrid.begin(), kTempoGrid.end())
                                         : std::vector<double>{kTestTempo};
  data.train = build_split("train", train_ids, config, train_fonts, train_tempos);
  data.val = build_split("val", val_ids, config, train_fonts, {kTestTempo});
  data.test = build_split("test", test_ids, config, {kTestFontId}, {kTestTempo});
  return data;
}

Tensor4<float> stack_images(const std::vector<Image>& images) {
  auto out = Tensor4<float>::uninitialized({static_cast<Index>(images.size()), 1, kSnippetHeight, kSnippetWidth});
  for (std::size_t i = 0; i < images.size(); ++i) {
    require_shape(images[i].rows() == kSnippetHeight && images[i].cols() == kSnippetWidth,
                  "stack_images: snippet " + std::to_string(i) + " is not 180x200");
    out.plane(static_cast<Index>(i), 0) = images[i];
  }
  return out;
}

Tensor4<float> stack_spectrograms(const std::vector<Spectrogram>& specs) {
  auto out = Tensor4<float>::uninitialized({static_cast<Index>(specs.size()), 1, kSpectrogramBins, kExcerptFrames});
  for (std::size_t i = 0; i < specs.size(); ++i) {
    require_shape(specs[i].rows() == kSpectrogramBins && specs[i].cols() == kExcerptFrames,
                  "stack_spectrograms: excerpt " + std::to_string(i) + " is not 92x42");
    out.plane(static_cast<Index>(i), 0) = specs[i];
  }
  return out;
}

}  // namespace cmscore
