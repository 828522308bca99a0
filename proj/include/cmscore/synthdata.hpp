#pragma once

// Deterministic toy correspondence generator: symbolic pieces are engraved
// onto one unrolled staff and rendered to log-magnitude harmonic
// spectrograms, giving exact note-head <-> onset ground truth.

#include "cmscore/model.hpp"
#include "cmscore/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace cmscore {

using Image = RowMatrixX<float>;        // rows x cols, 1.0 = white paper
using Spectrogram = RowMatrixX<float>;  // bins x frames, nonnegative

inline constexpr double kFramesPerSecond = 20.0;
inline constexpr int kTestFontId = 3;
inline constexpr std::array<double, 4> kTempoGrid = {100.0, 110.0, 120.0, 130.0};
inline constexpr double kTestTempo = 120.0;

struct NoteEvent {
  int pitch = 0;       // index into the pitch range, 0 = lowest
  double beats = 1.0;  // nominal duration
  friend bool operator==(const NoteEvent&, const NoteEvent&) = default;
};

struct StaffLayout {
  int height = 180;
  int line_spacing = 10;   // px between staff lines; pitch steps are half of this
  int note_spacing = 48;   // px between consecutive note heads
  int margin = 100;        // blank paper before the first and after the last head
  int staff_center = 90;   // y of the middle staff line
  double head_rx = 5.5;
  double head_ry = 4.0;
  float line_value = 0.45F;
  float head_value = 0.0F;
  friend bool operator==(const StaffLayout&, const StaffLayout&) = default;
};

struct SymbolicPiece {
  int id = 0;
  std::vector<NoteEvent> notes;
  double tempo_bpm = 120.0;
  StaffLayout layout;

  double onset_beats(std::size_t note) const;
  double total_beats() const;
  friend bool operator==(const SymbolicPiece&, const SymbolicPiece&) = default;
};

/// Timbre used to render a spectrogram.
struct SoundFontProfile {
  int id = 0;
  double rolloff = 0.6;       // amplitude ratio between successive harmonics
  int harmonics = 4;
  double noise_floor = 0.0;   // broadband level added while any note sounds
  double decay_frames = 20.0; // exponential amplitude decay after onset
  double spread = 0.0;        // leakage into the two neighbouring bins
};

/// Fonts 0..2 are the training fonts; kTestFontId is held out for testing.
SoundFontProfile sound_font(int id);

struct AugmentParams {
  double scale = 1.0;  // [0.95, 1.05]
  int dy = 0;          // [-5, 5] px, system translation
  int dx = 0;          // [-5, 5] px, note translation
};

// --- pieces ----------------------------------------------------------------

SymbolicPiece gen_piece(std::uint64_t seed, int note_count, int pitch_range, int id = 0);

/// Onset frame = round(onset seconds * 20), onset seconds = beats * 60 / bpm.
int onset_frame(double beats, double tempo_bpm);

// --- sheet side ------------------------------------------------------------

struct StaffRender {
  Image image;
  std::vector<int> note_x;  // head centers, strictly increasing
  std::vector<int> note_y;
};

int pitch_to_y(int pitch, const StaffLayout& layout);
StaffRender render_unrolled_staff(const SymbolicPiece& piece);

/// 180x200 window centered on note_x, with scaling about the note, vertical
/// system shift and horizontal window shift; outside the staff is white.
Image cut_sheet_snippet(const Image& staff, int note_x, const AugmentParams& aug = {});

/// Scales a snippet about its center (bilinear), then shifts it by integer
/// (dy, dx); vacated pixels become white.
Image augment_image(const Image& snippet, const AugmentParams& aug);

// --- audio side ------------------------------------------------------------

/// Fundamental bin 6 + 4 * pitch; harmonic h sits at h times that bin and is
/// dropped above bin 91.
int fundamental_bin(int pitch);

struct SpectrogramRender {
  Spectrogram spec;
  std::vector<int> onset_frames;
};

SpectrogramRender render_spectrogram(const SymbolicPiece& piece, const SoundFontProfile& font);

/// The 42 frames ending at end_frame (inclusive); frames before 0 or past the
/// render are silent.
Spectrogram excerpt_ending_at(const Spectrogram& full, int end_frame);

/// Frames of audio after an anchor frame that an excerpt still covers.
inline constexpr int kExcerptLead = 20;

/// The 42 frames anchored on a frame: kExcerptLead frames after it are
/// included, the rest precede it.
Spectrogram excerpt_at(const Spectrogram& full, int anchor_frame);

/// Excerpt anchored on the onset frame of the given note.
Spectrogram render_spectrogram_excerpt(const SymbolicPiece& piece, std::size_t note,
                                       const SoundFontProfile& font);

// --- dataset ---------------------------------------------------------------

struct DatasetConfig {
  int train_pieces = 5;
  int val_pieces = 1;
  int test_pieces = 3;
  int notes_per_piece = 40;
  int pitch_range = 12;
  std::uint64_t seed = 1;
  bool multi_font = true;  // 3 training fonts instead of 1
  bool tempo_var = true;   // tempo grid 100..130 instead of 120 only
  // Explicit piece ids per split; empty means consecutive ids.
  std::vector<int> train_ids;
  std::vector<int> val_ids;
  std::vector<int> test_ids;
};

struct PieceRecord {
  SymbolicPiece piece;
  Image staff;
  std::vector<int> note_x;
};

struct Rendering {
  int piece_id = 0;
  int font = 0;
  double tempo = 120.0;
  Spectrogram spec;
  std::vector<int> onset_frames;
};

struct CorrespondencePair {
  int piece_id = 0;
  int note_index = 0;
  int snippet = 0;    // index into Split::snippets
  int rendering = 0;  // index into Split::renderings
  int font = 0;
  double tempo = 120.0;
  int x_pixel = 0;
  int onset_frame = 0;
};

struct Split {
  std::string name;
  std::vector<int> fonts;
  std::vector<double> tempos;
  std::vector<PieceRecord> pieces;
  std::vector<Image> snippets;         // one unaugmented snippet per (piece, note)
  std::vector<Rendering> renderings;   // one per (piece, font, tempo)
  std::vector<CorrespondencePair> pairs;
  std::vector<Spectrogram> excerpts;   // one per pair

  const PieceRecord& piece(int id) const;
  std::vector<int> piece_ids() const;
};

struct Dataset {
  DatasetConfig config;
  Split train;
  Split val;
  Split test;
};

Dataset build_dataset(const DatasetConfig& config);

/// Rejects piece ids shared between splits.
void check_disjoint(const Dataset& data);

void write_dataset(const Dataset& data, const std::filesystem::path& dir);
Dataset read_dataset(const std::filesystem::path& dir);

// --- tensors ---------------------------------------------------------------

Tensor4<float> stack_images(const std::vector<Image>& images);
Tensor4<float> stack_spectrograms(const std::vector<Spectrogram>& specs);

}  // namespace cmscore
