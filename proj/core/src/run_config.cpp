#include "tosa/run_config.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace tosa {

namespace {

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

struct RawEntry {
  std::string value;
  std::size_t line = 0;
  bool consumed = false;
};

/// section -> key -> entry
using RawConfig = std::map<std::string, std::map<std::string, RawEntry>>;

RawConfig tokenize(const std::string& text, const std::string& filename) {
  RawConfig raw;
  std::string section;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(filename, lineno, "unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      if (section.empty()) throw ConfigError(filename, lineno, "empty section name");
      raw[section];
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(filename, lineno, "expected 'key = value', got '" + line + "'");
    }
    if (section.empty()) {
      throw ConfigError(filename, lineno, "key outside any [section]");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError(filename, lineno, "empty key");
    auto [it, inserted] = raw[section].emplace(key, RawEntry{value, lineno, false});
    if (!inserted) {
      throw ConfigError(filename, lineno, "duplicate key '" + key + "' in section [" + section + "]");
    }
  }
  return raw;
}

class Extractor {
 public:
  Extractor(RawConfig& raw, std::string filename) : raw_(raw), filename_(std::move(filename)) {}

  bool has(const std::string& section, const std::string& key) {
    auto sit = raw_.find(section);
    return sit != raw_.end() && sit->second.count(key) > 0;
  }

  RawEntry* find(const std::string& section, const std::string& key) {
    auto sit = raw_.find(section);
    if (sit == raw_.end()) return nullptr;
    auto kit = sit->second.find(key);
    if (kit == sit->second.end()) return nullptr;
    kit->second.consumed = true;
    return &kit->second;
  }

  template <typename Parse>
  void get(const std::string& section, const std::string& key, Parse parse) {
    RawEntry* e = find(section, key);
    if (!e) return;
    try {
      parse(e->value);
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& ex) {
      throw ConfigError(filename_, e->line, "key '" + key + "': " + ex.what());
    }
  }

  void get_size(const std::string& section, const std::string& key, std::size_t& out) {
    get(section, key, [&](const std::string& v) {
      std::size_t pos = 0;
      const long long parsed = std::stoll(v, &pos);
      if (pos != v.size() || parsed < 0) throw std::invalid_argument("expected a non-negative integer");
      out = static_cast<std::size_t>(parsed);
    });
  }

  void get_u64(const std::string& section, const std::string& key, std::uint64_t& out) {
    get(section, key, [&](const std::string& v) {
      std::size_t pos = 0;
      const unsigned long long parsed = std::stoull(v, &pos);
      if (pos != v.size()) throw std::invalid_argument("expected an unsigned integer");
      out = parsed;
    });
  }

  void get_double(const std::string& section, const std::string& key, double& out) {
    get(section, key, [&](const std::string& v) {
      std::size_t pos = 0;
      const double parsed = std::stod(v, &pos);
      if (pos != v.size()) throw std::invalid_argument("expected a number");
      out = parsed;
    });
  }

  void get_string(const std::string& section, const std::string& key, std::string& out) {
    get(section, key, [&](const std::string& v) { out = v; });
  }

  void get_size_list(const std::string& section, const std::string& key,
                     std::vector<std::size_t>& out) {
    get(section, key, [&](const std::string& v) {
      out.clear();
      if (trim(v).empty() || trim(v) == "none") return;
      std::istringstream parts(v);
      std::string part;
      while (std::getline(parts, part, ',')) {
        part = trim(part);
        std::size_t pos = 0;
        const long long parsed = std::stoll(part, &pos);
        if (pos != part.size() || parsed < 0) {
          throw std::invalid_argument("expected comma-separated non-negative integers");
        }
        out.push_back(static_cast<std::size_t>(parsed));
      }
    });
  }

  void reject_unconsumed() {
    static const std::vector<std::string> known_sections = {
        "model", "data", "pretrain", "selector", "finetune", "dense", "run"};
    for (const auto& [section, keys] : raw_) {
      if (std::find(known_sections.begin(), known_sections.end(), section) ==
          known_sections.end()) {
        // report at the first key's line, or 0 for an empty section
        const std::size_t line = keys.empty() ? 0 : keys.begin()->second.line;
        throw ConfigError(filename_, line, "unknown section [" + section + "]");
      }
      for (const auto& [key, entry] : keys) {
        if (!entry.consumed) {
          throw ConfigError(filename_, entry.line,
                            "unknown key '" + key + "' in section [" + section + "]");
        }
      }
    }
  }

  const std::string& filename() const { return filename_; }

 private:
  RawConfig& raw_;
  std::string filename_;
};

TrainConfig default_phase_config(Phase phase, std::uint64_t seed) {
  TrainConfig c;
  c.phase = phase;
  c.seed = seed;
  switch (phase) {
    case Phase::kPretrain:
      c.epochs = 12;
      c.lr = 3e-4;
      c.loss = LossKind::kCrossEntropy;
      break;
    case Phase::kSelector:
      c.epochs = 8;
      c.lr = 1e-3;
      c.loss = LossKind::kKld;
      break;
    case Phase::kFinetune:
      c.epochs = 6;
      c.lr = 1e-4;
      c.loss = LossKind::kCrossEntropy;
      break;
    case Phase::kDense:
      c.epochs = 40;
      c.lr = 1e-2;
      c.loss = LossKind::kMse;
      break;
  }
  return c;
}

void extract_phase(Extractor& ex, const std::string& section, TrainConfig& c) {
  ex.get_size(section, "epochs", c.epochs);
  ex.get_size(section, "batch_size", c.batch_size);
  ex.get_double(section, "lr", c.lr);
  ex.get_double(section, "weight_decay", c.weight_decay);
  ex.get(section, "optimizer", [&](const std::string& v) { c.optimizer = optimizer_from_name(v); });
  ex.get(section, "loss", [&](const std::string& v) { c.loss = loss_from_name(v); });
  ex.get_u64(section, "seed", c.seed);
}

const std::vector<std::string>& canonical_phase_order() {
  static const std::vector<std::string> order = {"pretrain", "selector", "finetune", "dense", "eval"};
  return order;
}

}  // namespace

RunConfig default_run_config() {
  RunConfig c;
  for (Phase p : {Phase::kPretrain, Phase::kSelector, Phase::kFinetune, Phase::kDense}) {
    c.phases.emplace(p, default_phase_config(p, c.seed));
  }
  c.phase_order = canonical_phase_order();
  return c;
}

RunConfig parse_run_config_text(const std::string& text, const std::string& filename) {
  RawConfig raw = tokenize(text, filename);
  Extractor ex(raw, filename);
  RunConfig c = default_run_config();

  // [run] first: seed feeds the per-phase defaults
  ex.get_u64("run", "seed", c.seed);
  for (auto& [phase, cfg] : c.phases) cfg.seed = c.seed;
  ex.get_string("run", "out", c.out_dir);
  {
    RawEntry* e = ex.find("run", "phases");
    if (e) {
      std::vector<std::string> listed;
      std::istringstream parts(e->value);
      std::string part;
      while (std::getline(parts, part, ',')) {
        part = trim(part);
        if (!part.empty()) listed.push_back(part);
      }
      // must be a non-empty subsequence of the canonical order
      const auto& canon = canonical_phase_order();
      std::size_t cursor = 0;
      for (const std::string& name : listed) {
        auto it = std::find(canon.begin() + static_cast<std::ptrdiff_t>(cursor), canon.end(), name);
        if (it == canon.end()) {
          const bool known = std::find(canon.begin(), canon.end(), name) != canon.end();
          throw ConfigError(filename, e->line,
                            known ? "phase '" + name + "' out of order (expected pretrain,selector,finetune,dense,eval)"
                                  : "unknown phase '" + name + "'");
        }
        cursor = static_cast<std::size_t>(it - canon.begin()) + 1;
      }
      if (listed.empty()) throw ConfigError(filename, e->line, "phases list is empty");
      c.phase_order = listed;
    }
  }

  ex.get_size("model", "image_size", c.model.image_size);
  ex.get_size("model", "patch_size", c.model.patch_size);
  ex.get_size("model", "channels", c.model.channels);
  ex.get_size("model", "embed_dim", c.model.embed_dim);
  ex.get_size("model", "heads", c.model.heads);
  ex.get_size("model", "depth", c.model.depth);
  ex.get_size("model", "num_classes", c.model.num_classes);
  ex.get_size_list("model", "tosa_layers", c.model.tosa_layers);
  ex.get_double("model", "ratio", c.model.ratio);
  ex.get("model", "skip_scope",
         [&](const std::string& v) { c.model.scope = skip_scope_from_name(v); });
  ex.get_size("model", "selector_channels", c.model.selector_channels);
  ex.get_size("model", "selector_kernel", c.model.selector_kernel);

  ex.get_string("data", "source", c.data.source);
  ex.get_size("data", "train_size", c.data.train_size);
  ex.get_size("data", "test_size", c.data.test_size);

  extract_phase(ex, "pretrain", c.phases.at(Phase::kPretrain));
  extract_phase(ex, "selector", c.phases.at(Phase::kSelector));
  extract_phase(ex, "finetune", c.phases.at(Phase::kFinetune));
  extract_phase(ex, "dense", c.phases.at(Phase::kDense));

  ex.reject_unconsumed();

  try {
    c.model.validate();
    for (const auto& [phase, cfg] : c.phases) cfg.validate();
  } catch (const std::exception& e) {
    throw ConfigError(filename, 0, e.what());
  }
  return c;
}

RunConfig parse_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path, 0, "cannot open config file");
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_run_config_text(buffer.str(), path);
}

std::string render_effective_config(const RunConfig& c) {
  std::ostringstream os;
  auto num = [](double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
  };

  os << "[model]\n";
  os << "image_size = " << c.model.image_size << "\n";
  os << "patch_size = " << c.model.patch_size << "\n";
  os << "channels = " << c.model.channels << "\n";
  os << "embed_dim = " << c.model.embed_dim << "\n";
  os << "heads = " << c.model.heads << "\n";
  os << "depth = " << c.model.depth << "\n";
  os << "num_classes = " << c.model.num_classes << "\n";
  os << "tosa_layers = ";
  if (c.model.tosa_layers.empty()) {
    os << "none";
  } else {
    for (std::size_t i = 0; i < c.model.tosa_layers.size(); ++i) {
      if (i) os << ",";
      os << c.model.tosa_layers[i];
    }
  }
  os << "\n";
  os << "ratio = " << num(c.model.ratio) << "\n";
  os << "skip_scope = " << skip_scope_name(c.model.scope) << "\n";
  os << "selector_channels = " << c.model.selector_channels << "\n";
  os << "selector_kernel = " << c.model.selector_kernel << "\n";

  os << "\n[data]\n";
  os << "source = " << c.data.source << "\n";
  os << "train_size = " << c.data.train_size << "\n";
  os << "test_size = " << c.data.test_size << "\n";

  static const std::pair<Phase, const char*> phase_sections[] = {
      {Phase::kPretrain, "pretrain"},
      {Phase::kSelector, "selector"},
      {Phase::kFinetune, "finetune"},
      {Phase::kDense, "dense"},
  };
  for (const auto& [phase, section] : phase_sections) {
    const TrainConfig& t = c.phases.at(phase);
    os << "\n[" << section << "]\n";
    os << "epochs = " << t.epochs << "\n";
    os << "batch_size = " << t.batch_size << "\n";
    os << "lr = " << num(t.lr) << "\n";
    os << "weight_decay = " << num(t.weight_decay) << "\n";
    os << "optimizer = " << optimizer_name(t.optimizer) << "\n";
    os << "loss = " << loss_name(t.loss) << "\n";
    os << "seed = " << t.seed << "\n";
  }

  os << "\n[run]\n";
  os << "seed = " << c.seed << "\n";
  os << "out = " << c.out_dir << "\n";
  os << "phases = ";
  for (std::size_t i = 0; i < c.phase_order.size(); ++i) {
    if (i) os << ",";
    os << c.phase_order[i];
  }
  os << "\n";
  return os.str();
}

}  // namespace tosa
