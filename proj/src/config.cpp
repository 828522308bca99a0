#include "cmscore/config.hpp"

#include "cmscore/io.hpp"

#include <charconv>
#include <cstdio>
#include <sstream>
#include <variant>

namespace cmscore {

namespace {

using Field = std::variant<std::filesystem::path*, std::uint64_t*, double*, int*, bool*, std::vector<std::string>*>;

std::vector<std::pair<std::string, Field>> fields(RunConfig& c) {
  return {
      {"dataset", &c.dataset},
      {"checkpoint", &c.checkpoint},
      {"out", &c.out},
      {"seed", &c.seed},
      {"kappa", &c.kappa},
      {"margin", &c.margin},
      {"batch_size", &c.batch_size},
      {"learning_rate", &c.learning_rate},
      {"patience", &c.patience},
      {"halvings", &c.halvings},
      {"max_epochs", &c.max_epochs},
      {"symmetric_loss", &c.symmetric_loss},
      {"improvement_tol", &c.improvement_tol},
      {"image_scaling", &c.image_scaling},
      {"dy_system", &c.dy_system},
      {"dx_note", &c.dx_note},
      {"multi_font", &c.multi_font},
      {"tempo_var", &c.tempo_var},
      {"train_pieces", &c.train_pieces},
      {"val_pieces", &c.val_pieces},
      {"test_pieces", &c.test_pieces},
      {"notes_per_piece", &c.notes_per_piece},
      {"pitch_range", &c.pitch_range},
      {"hop_img", &c.hop_img},
      {"hop_aud", &c.hop_aud},
      {"reference_width", &c.reference_width},
      {"votes_per_query", &c.votes_per_query},
      {"ablate_rows", &c.ablate_rows},
      {"ablate_seeds", &c.ablate_seeds},
      {"ablate_steps", &c.ablate_steps},
  };
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const auto* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) throw ConfigError("invalid value for " + key + ": '" + value + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "1" || value == "true" || value == "on" || value == "yes") return true;
  if (value == "0" || value == "false" || value == "off" || value == "no") return false;
  throw ConfigError("invalid boolean for " + key + ": '" + value + "'");
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void validate(const RunConfig& c) {
  if (!(c.kappa > 0 && c.kappa <= 1)) throw ConfigError("kappa must lie in (0, 1]");
  if (c.margin < 0) throw ConfigError("margin must be non-negative");
  if (c.batch_size < 2) throw ConfigError("batch_size must be at least 2");
  if (!(c.learning_rate > 0)) throw ConfigError("learning_rate must be positive");
  if (c.patience < 1 || c.halvings < 0 || c.max_epochs < 0) throw ConfigError("invalid schedule settings");
  if (c.train_pieces < 1 || c.val_pieces < 0 || c.test_pieces < 0) throw ConfigError("invalid piece counts");
  if (c.notes_per_piece < 1 || c.pitch_range < 1) throw ConfigError("invalid piece shape");
  if (c.hop_img < 1 || c.hop_aud < 1) throw ConfigError("hops must be >= 1");
  if (!(c.reference_width > 0)) throw ConfigError("reference_width must be positive");
  if (c.votes_per_query < 1) throw ConfigError("votes_per_query must be >= 1");
  if (c.ablate_seeds < 1 || c.ablate_steps < 0) throw ConfigError("invalid ablation settings");
}

}  // namespace

std::vector<std::string> RunConfig::keys() {
  RunConfig c;
  std::vector<std::string> out;
  for (const auto& [k, f] : fields(c)) out.push_back(k);
  return out;
}

void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  for (auto& [k, f] : fields(cfg)) {
    if (k != key) continue;
    std::visit(
        [&](auto* p) {
          using T = std::remove_pointer_t<decltype(p)>;
          if constexpr (std::is_same_v<T, std::filesystem::path>) {
            *p = value;
          } else if constexpr (std::is_same_v<T, bool>) {
            *p = parse_bool(key, value);
          } else if constexpr (std::is_same_v<T, std::vector<std::string>>) {
            p->clear();
            std::stringstream ss(value);
            std::string item;
            while (std::getline(ss, item, ',')) {
              item = trim(item);
              if (!item.empty()) p->push_back(item);
            }
          } else {
            *p = parse_number<T>(key, value);
          }
        },
        f);
    validate(cfg);
    return;
  }
  throw ConfigError("unknown config key '" + key + "'");
}

void apply_override(RunConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("expected key=value, got '" + assignment + "'");
  set_config_value(cfg, trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

RunConfig parse_config(const std::string& text, const std::string& origin) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto t = trim(line.substr(0, line.find('#')));
    if (t.empty()) continue;
    try {
      apply_override(cfg, t);
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  if (!std::filesystem::is_regular_file(path)) throw ConfigError("config file not found: " + path.string());
  return parse_config(read_text(path), path.string());
}

std::string to_text(const RunConfig& cfg) {
  RunConfig copy = cfg;
  std::ostringstream out;
  for (const auto& [k, f] : fields(copy)) {
    out << k << " = ";
    std::visit(
        [&](auto* p) {
          using T = std::remove_pointer_t<decltype(p)>;
          if constexpr (std::is_same_v<T, std::filesystem::path>) {
            out << p->string();
          } else if constexpr (std::is_same_v<T, bool>) {
            out << (*p ? "true" : "false");
          } else if constexpr (std::is_same_v<T, double>) {
            out << format_double(*p);
          } else if constexpr (std::is_same_v<T, std::vector<std::string>>) {
            for (std::size_t i = 0; i < p->size(); ++i) out << (i ? "," : "") << (*p)[i];
          } else {
            out << *p;
          }
        },
        f);
    out << "\n";
  }
  return out.str();
}

void apply_augment_preset(RunConfig& cfg, const std::string& preset) {
  bool on = false;
  if (preset == "full") {
    on = true;
  } else if (preset != "none") {
    throw ConfigError("--augment expects none or full, got '" + preset + "'");
  }
  cfg.image_scaling = cfg.dy_system = cfg.dx_note = on;
  cfg.multi_font = cfg.tempo_var = on;
}

TrainConfig train_config(const RunConfig& cfg) {
  TrainConfig t;
  t.kappa = cfg.kappa;
  t.margin = cfg.margin;
  t.batch_size = cfg.batch_size;
  t.learning_rate = cfg.learning_rate;
  t.patience = cfg.patience;
  t.halvings = cfg.halvings;
  t.improvement_tol = cfg.improvement_tol;
  t.symmetric = cfg.symmetric_loss;
  t.max_epochs = cfg.max_epochs;
  t.seed = cfg.seed;
  t.image_scaling = cfg.image_scaling;
  t.dy_system = cfg.dy_system;
  t.dx_note = cfg.dx_note;
  return t;
}

DatasetConfig dataset_config(const RunConfig& cfg) {
  DatasetConfig d;
  d.train_pieces = cfg.train_pieces;
  d.val_pieces = cfg.val_pieces;
  d.test_pieces = cfg.test_pieces;
  d.notes_per_piece = cfg.notes_per_piece;
  d.pitch_range = cfg.pitch_range;
  d.seed = cfg.seed;
  d.multi_font = cfg.multi_font;
  d.tempo_var = cfg.tempo_var;
  return d;
}

}  // namespace cmscore
