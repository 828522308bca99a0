#include "cmscore/io.hpp"
#include "cmscore/synthdata.hpp"

#include <json.hpp>

#include <cstdio>

namespace cmscore {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kManifestVersion = 1;

std::string tempo_tag(double tempo) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", tempo);
  return buf;
}

std::string staff_file(int piece) { return "staff_" + std::to_string(piece) + ".f32"; }
std::string rendering_file(const Rendering& r) {
  return "spectrogram_" + std::to_string(r.piece_id) + "_f" + std::to_string(r.font) + "_t" +
         tempo_tag(r.tempo) + ".f32";
}

template <typename Mat>
void append(std::vector<float>& out, const Mat& m) {
  out.insert(out.end(), m.data(), m.data() + m.size());
}

void write_split(const Split& split, const fs::path& dir) {
  fs::create_directories(dir);
  json manifest;
  manifest["format_version"] = kManifestVersion;
  manifest["split"] = split.name;
  manifest["fonts"] = split.fonts;
  manifest["tempos"] = split.tempos;
  manifest["snippet_dims"] = {kSnippetHeight, kSnippetWidth};
  manifest["excerpt_dims"] = {kSpectrogramBins, kExcerptFrames};

  json pieces = json::array();
  for (const auto& rec : split.pieces) {
    json notes = json::array();
    for (const auto& n : rec.piece.notes) notes.push_back({{"pitch", n.pitch}, {"beats", n.beats}});
    const auto& lay = rec.piece.layout;
    pieces.push_back({{"id", rec.piece.id},
                      {"notes", notes},
                      {"note_x", rec.note_x},
                      {"staff_file", staff_file(rec.piece.id)},
                      {"staff_dims", {rec.staff.rows(), rec.staff.cols()}},
                      {"layout",
                       {{"line_spacing", lay.line_spacing},
                        {"note_spacing", lay.note_spacing},
                        {"margin", lay.margin},
                        {"staff_center", lay.staff_center}}}});
    write_f32(dir / staff_file(rec.piece.id), {rec.staff.data(), static_cast<std::size_t>(rec.staff.size())});
  }
  manifest["pieces"] = pieces;

  json renderings = json::array();
  for (const auto& r : split.renderings) {
    renderings.push_back({{"piece_id", r.piece_id},
                          {"font", r.font},
                          {"tempo", r.tempo},
                          {"file", rendering_file(r)},
                          {"frames", r.spec.cols()},
                          {"onset_frames", r.onset_frames}});
    write_f32(dir / rendering_file(r), {r.spec.data(), static_cast<std::size_t>(r.spec.size())});
  }
  manifest["renderings"] = renderings;

  std::vector<float> blob;
  blob.reserve(split.snippets.size() * kSnippetHeight * kSnippetWidth);
  for (const auto& s : split.snippets) append(blob, s);
  write_f32(dir / "snippets.f32", blob);
  manifest["snippets"] = {{"file", "snippets.f32"}, {"count", split.snippets.size()}};

  blob.clear();
  blob.reserve(split.excerpts.size() * kSpectrogramBins * kExcerptFrames);
  for (const auto& e : split.excerpts) append(blob, e);
  write_f32(dir / "excerpts.f32", blob);
  manifest["excerpts"] = {{"file", "excerpts.f32"}, {"count", split.excerpts.size()}};

  json pairs = json::array();
  for (std::size_t i = 0; i < split.pairs.size(); ++i) {
    const auto& p = split.pairs[i];
    pairs.push_back({{"pair", i},
                     {"piece_id", p.piece_id},
                     {"note_index", p.note_index},
                     {"snippet", p.snippet},
                     {"rendering", p.rendering},
                     {"font", p.font},
                     {"tempo", p.tempo},
                     {"x_pixel", p.x_pixel},
                     {"onset_frame", p.onset_frame}});
  }
  manifest["pairs"] = pairs;
  write_text(dir / "manifest.json", manifest.dump(1) + "\n");
}

template <typename Mat>
Mat slice(const std::vector<float>& blob, std::size_t index, Index rows, Index cols) {
  const auto n = static_cast<std::size_t>(rows * cols);
  return Eigen::Map<const Mat>(blob.data() + index * n, rows, cols);
}

Split read_split(const fs::path& dir) {
  json manifest;
  try {
    manifest = json::parse(read_text(dir / "manifest.json"));
  } catch (const json::exception& e) {
    throw FormatError(dir.string() + "/manifest.json: " + e.what());
  }
  try {
    if (manifest.at("format_version").get<int>() != kManifestVersion) {
      throw FormatError(dir.string() + ": unsupported manifest version");
    }
    Split split;
    split.name = manifest.at("split").get<std::string>();
    split.fonts = manifest.at("fonts").get<std::vector<int>>();
    split.tempos = manifest.at("tempos").get<std::vector<double>>();
    for (const auto& jp : manifest.at("pieces")) {
      PieceRecord rec;
      rec.piece.id = jp.at("id").get<int>();
      for (const auto& jn : jp.at("notes")) {
        rec.piece.notes.push_back({jn.at("pitch").get<int>(), jn.at("beats").get<double>()});
      }
      const auto& jl = jp.at("layout");
      rec.piece.layout.line_spacing = jl.at("line_spacing").get<int>();
      rec.piece.layout.note_spacing = jl.at("note_spacing").get<int>();
      rec.piece.layout.margin = jl.at("margin").get<int>();
      rec.piece.layout.staff_center = jl.at("staff_center").get<int>();
      rec.note_x = jp.at("note_x").get<std::vector<int>>();
      const auto dims = jp.at("staff_dims").get<std::vector<Index>>();
      const auto pixels = read_f32(dir / jp.at("staff_file").get<std::string>(),
                                   static_cast<std::size_t>(dims.at(0) * dims.at(1)));
      rec.staff = slice<Image>(pixels, 0, dims.at(0), dims.at(1));
      split.pieces.push_back(std::move(rec));
    }
    for (const auto& jr : manifest.at("renderings")) {
      Rendering r;
      r.piece_id = jr.at("piece_id").get<int>();
      r.font = jr.at("font").get<int>();
      r.tempo = jr.at("tempo").get<double>();
      r.onset_frames = jr.at("onset_frames").get<std::vector<int>>();
      const auto frames = jr.at("frames").get<Index>();
      const auto values = read_f32(dir / jr.at("file").get<std::string>(),
                                   static_cast<std::size_t>(kSpectrogramBins * frames));
      r.spec = slice<Spectrogram>(values, 0, kSpectrogramBins, frames);
      split.renderings.push_back(std::move(r));
    }
    const auto n_snippets = manifest.at("snippets").at("count").get<std::size_t>();
    const auto snippets = read_f32(dir / manifest.at("snippets").at("file").get<std::string>(),
                                   n_snippets * kSnippetHeight * kSnippetWidth);
    for (std::size_t i = 0; i < n_snippets; ++i) {
      split.snippets.push_back(slice<Image>(snippets, i, kSnippetHeight, kSnippetWidth));
    }
    const auto n_excerpts = manifest.at("excerpts").at("count").get<std::size_t>();
    const auto excerpts = read_f32(dir / manifest.at("excerpts").at("file").get<std::string>(),
                                   n_excerpts * kSpectrogramBins * kExcerptFrames);
    for (std::size_t i = 0; i < n_excerpts; ++i) {
      split.excerpts.push_back(slice<Spectrogram>(excerpts, i, kSpectrogramBins, kExcerptFrames));
    }
    for (const auto& jp : manifest.at("pairs")) {
      CorrespondencePair p;
      p.piece_id = jp.at("piece_id").get<int>();
      p.note_index = jp.at("note_index").get<int>();
      p.snippet = jp.at("snippet").get<int>();
      p.rendering = jp.at("rendering").get<int>();
      p.font = jp.at("font").get<int>();
      p.tempo = jp.at("tempo").get<double>();
      p.x_pixel = jp.at("x_pixel").get<int>();
      p.onset_frame = jp.at("onset_frame").get<int>();
      if (p.snippet < 0 || static_cast<std::size_t>(p.snippet) >= split.snippets.size() || p.rendering < 0 ||
          static_cast<std::size_t>(p.rendering) >= split.renderings.size()) {
        throw FormatError(dir.string() + ": pair references a missing snippet or rendering");
      }
      split.pairs.push_back(p);
    }
    if (split.pairs.size() != split.excerpts.size()) {
      throw FormatError(dir.string() + ": pair count does not match excerpt count");
    }
    return split;
  } catch (const json::exception& e) {
    throw FormatError(dir.string() + "/manifest.json: " + e.what());
  }
}

}  // namespace

void write_dataset(const Dataset& data, const fs::path& dir) {
  check_disjoint(data);
  fs::create_directories(dir);
  const auto& c = data.config;
  json top = {{"format_version", kManifestVersion},
              {"seed", c.seed},
              {"notes_per_piece", c.notes_per_piece},
              {"pitch_range", c.pitch_range},
              {"multi_font", c.multi_font},
              {"tempo_var", c.tempo_var},
              {"splits",
               {{"train", data.train.piece_ids()}, {"val", data.val.piece_ids()}, {"test", data.test.piece_ids()}}}};
  write_text(dir / "manifest.json", top.dump(1) + "\n");
  write_split(data.train, dir / "train");
  write_split(data.val, dir / "val");
  write_split(data.test, dir / "test");
}

Dataset read_dataset(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw FormatError("dataset directory " + dir.string() + " does not exist");
  Dataset data;
  try {
    const auto top = json::parse(read_text(dir / "manifest.json"));
    if (top.at("format_version").get<int>() != kManifestVersion) {
      throw FormatError(dir.string() + ": unsupported dataset version");
    }
    auto& c = data.config;
    c.seed = top.at("seed").get<std::uint64_t>();
    c.notes_per_piece = top.at("notes_per_piece").get<int>();
    c.pitch_range = top.at("pitch_range").get<int>();
    c.multi_font = top.at("multi_font").get<bool>();
    c.tempo_var = top.at("tempo_var").get<bool>();
    c.train_ids = top.at("splits").at("train").get<std::vector<int>>();
    c.val_ids = top.at("splits").at("val").get<std::vector<int>>();
    c.test_ids = top.at("splits").at("test").get<std::vector<int>>();
    c.train_pieces = static_cast<int>(c.train_ids.size());
    c.val_pieces = static_cast<int>(c.val_ids.size());
    c.test_pieces = static_cast<int>(c.test_ids.size());
  } catch (const json::exception& e) {
    throw FormatError(dir.string() + "/manifest.json: " + e.what());
  }
  data.train = read_split(dir / "train");
  data.val = read_split(dir / "val");
  data.test = read_split(dir / "test");
  check_disjoint(data);
  return data;
}

}  // namespace cmscore
