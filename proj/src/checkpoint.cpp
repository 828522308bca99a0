#include "cmscore/checkpoint.hpp"

#include "cmscore/io.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <iterator>

namespace cmscore {

namespace {

constexpr char kMagic[8] = {'C', 'M', 'S', 'C', 'K', 'P', 'T', '\0'};

class Writer {
 public:
  template <typename T>
  void put(T value) {
    const auto* p = reinterpret_cast<const char*>(&value);
    bytes_.insert(bytes_.end(), p, p + sizeof(T));
  }
  void put_floats(const float* data, Index n) {
    put(static_cast<std::uint32_t>(n));
    const auto* p = reinterpret_cast<const char*>(data);
    bytes_.insert(bytes_.end(), p, p + n * static_cast<Index>(sizeof(float)));
  }
  void raw(const char* p, std::size_t n) { bytes_.insert(bytes_.end(), p, p + n); }
  const std::vector<char>& bytes() const { return bytes_; }

 private:
  std::vector<char> bytes_;
};

class Reader {
 public:
  Reader(std::vector<char> bytes, std::string origin) : bytes_(std::move(bytes)), origin_(std::move(origin)) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }
  void get_floats(float* data, Index expected) {
    const auto n = get<std::uint32_t>();
    if (static_cast<Index>(n) != expected) {
      throw FormatError(origin_ + ": parameter array holds " + std::to_string(n) + " values, expected " +
                        std::to_string(expected));
    }
    need(n * sizeof(float));
    std::memcpy(data, bytes_.data() + pos_, n * sizeof(float));
    pos_ += n * sizeof(float);
  }
  void raw(char* out, std::size_t n) {
    need(n);
    std::memcpy(out, bytes_.data() + pos_, n);
    pos_ += n;
  }
  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw FormatError(origin_ + ": truncated checkpoint");
  }
  std::vector<char> bytes_;
  std::string origin_;
  std::size_t pos_ = 0;
};

void put_spec(Writer& w, const PathwaySpec& s) {
  w.put(static_cast<std::uint32_t>(s.height));
  w.put(static_cast<std::uint32_t>(s.width));
  for (Index c : s.block_channels) w.put(static_cast<std::uint32_t>(c));
  w.put(static_cast<std::uint32_t>(s.embed_dim));
}

PathwaySpec get_spec(Reader& r) {
  PathwaySpec s;
  s.height = r.get<std::uint32_t>();
  s.width = r.get<std::uint32_t>();
  for (auto& c : s.block_channels) c = r.get<std::uint32_t>();
  s.embed_dim = r.get<std::uint32_t>();
  const bool sane = s.height > 0 && s.height <= 4096 && s.width > 0 && s.width <= 4096 && s.embed_dim > 0 &&
                    s.embed_dim <= 4096 &&
                    std::all_of(s.block_channels.begin(), s.block_channels.end(),
                                [](Index c) { return c > 0 && c <= 4096; });
  if (!sane) throw FormatError("checkpoint pathway geometry is corrupt");
  return s;
}

}  // namespace

void save_checkpoint(const ModelCheckpoint& ckpt, const std::filesystem::path& path) {
  Writer w;
  w.raw(kMagic, sizeof(kMagic));
  w.put(kCheckpointVersion);
  w.put(ckpt.epoch);
  w.put(ckpt.model.kappa);
  put_spec(w, ckpt.model.image.spec);
  put_spec(w, ckpt.model.audio.spec);
  auto put_arrays = [&](const float* p, Index n) { w.put_floats(p, n); };
  ckpt.model.image.for_each_array(put_arrays);
  ckpt.model.audio.for_each_array(put_arrays);
  w.put(static_cast<std::uint8_t>(ckpt.training ? 1 : 0));
  if (ckpt.training) {
    const auto& t = *ckpt.training;
    w.put(t.step_in_epoch);
    w.put(static_cast<std::int64_t>(t.adam.step));
    w.put(t.best_val);
    w.put(static_cast<std::int32_t>(t.stale));
    w.put(static_cast<std::int32_t>(t.halvings));
    w.put(static_cast<std::uint32_t>(t.adam.first.size()));
    for (const auto& m : t.adam.first) w.put_floats(m.data(), m.size());
    for (const auto& v : t.adam.second) w.put_floats(v.data(), v.size());
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  out.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
  if (!out) throw FormatError("short write to " + path.string());
}

ModelCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Reader r(std::move(bytes), path.string());

  char magic[sizeof(kMagic)];
  r.raw(magic, sizeof(magic));
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw FormatError(path.string() + ": not a checkpoint (bad magic)");
  }
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw FormatError(path.string() + ": checkpoint version " + std::to_string(version) + ", expected " +
                      std::to_string(kCheckpointVersion));
  }
  ModelCheckpoint ckpt;
  ckpt.epoch = r.get<std::uint32_t>();
  ckpt.model.kappa = r.get<double>();
  const PathwaySpec image = get_spec(r);
  const PathwaySpec audio = get_spec(r);
  ckpt.model.image = PathwayParams<float>(image);
  ckpt.model.audio = PathwayParams<float>(audio);
  auto get_arrays = [&](float* p, Index n) { r.get_floats(p, n); };
  ckpt.model.image.for_each_array(get_arrays);
  ckpt.model.audio.for_each_array(get_arrays);
  if (r.get<std::uint8_t>() != 0) {
    TrainingState t;
    t.step_in_epoch = r.get<std::uint32_t>();
    t.adam.step = r.get<std::int64_t>();
    t.best_val = r.get<double>();
    t.stale = r.get<std::int32_t>();
    t.halvings = r.get<std::int32_t>();
    const auto arrays = r.get<std::uint32_t>();
    const auto params = trainable_arrays(ckpt.model);
    if (arrays != 0 && arrays != params.size()) {
      throw FormatError(path.string() + ": optimizer state covers " + std::to_string(arrays) +
                        " arrays, model has " + std::to_string(params.size()));
    }
    for (auto* moments : {&t.adam.first, &t.adam.second}) {
      for (std::uint32_t i = 0; i < arrays; ++i) {
        VectorX<float> m(params[i].size());
        r.get_floats(m.data(), m.size());
        moments->push_back(std::move(m));
      }
    }
    ckpt.training = std::move(t);
  }
  if (!r.at_end()) throw FormatError(path.string() + ": trailing bytes after checkpoint");
  return ckpt;
}

bool bitwise_equal(const Model<float>& a, const Model<float>& b) {
  if (!(a.image.spec == b.image.spec) || !(a.audio.spec == b.audio.spec)) return false;
  std::vector<std::pair<const float*, Index>> lhs;
  std::vector<std::pair<const float*, Index>> rhs;
  a.image.for_each_array([&](const float* p, Index n) { lhs.emplace_back(p, n); });
  a.audio.for_each_array([&](const float* p, Index n) { lhs.emplace_back(p, n); });
  b.image.for_each_array([&](const float* p, Index n) { rhs.emplace_back(p, n); });
  b.audio.for_each_array([&](const float* p, Index n) { rhs.emplace_back(p, n); });
  if (lhs.size() != rhs.size()) return false;
  for (std::size_t i = 0; i < lhs.size(); ++i) {
    if (lhs[i].second != rhs[i].second) return false;
    if (std::memcmp(lhs[i].first, rhs[i].first, static_cast<std::size_t>(lhs[i].second) * sizeof(float)) != 0) {
      return false;
    }
  }
  return true;
}

}  // namespace cmscore
