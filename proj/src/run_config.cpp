#include "ocrseg/run_config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace ocrseg {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  std::istringstream is(v);
  is.imbue(std::locale::classic());
  double out = 0.0;
  if (!(is >> out) || !is.eof()) throw ConfigError(key + ": expected a number, got '" + v + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "on" || v == "true" || v == "1") return true;
  if (v == "off" || v == "false" || v == "0") return false;
  throw ConfigError(key + ": expected on/off, got '" + v + "'");
}

std::string fmt(double v) {
  std::ostringstream os;
  os.imbue(std::locale::classic());
  os.precision(17);
  os << v;
  return os.str();
}

struct Field {
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename M>
Field size_field(M RunConfig::*m) {
  return {[m](RunConfig& c, const std::string& k, const std::string& v) { c.*m = static_cast<M>(parse_u64(k, v)); },
          [m](const RunConfig& c) { return std::to_string(c.*m); }};
}

Field double_field(double RunConfig::*m) {
  return {[m](RunConfig& c, const std::string& k, const std::string& v) { c.*m = parse_double(k, v); },
          [m](const RunConfig& c) { return fmt(c.*m); }};
}

const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> f = {
      {"seed", size_field(&RunConfig::seed)},
      {"data_seed", size_field(&RunConfig::data_seed)},
      {"lift_seed", size_field(&RunConfig::lift_seed)},
      {"grid", size_field(&RunConfig::grid)},
      {"classes", size_field(&RunConfig::classes)},
      {"train_scenes", size_field(&RunConfig::train_scenes)},
      {"eval_scenes", size_field(&RunConfig::eval_scenes)},
      {"iterations", size_field(&RunConfig::iterations)},
      {"batch", size_field(&RunConfig::batch)},
      {"base_lr", double_field(&RunConfig::base_lr)},
      {"poly_power", double_field(&RunConfig::poly_power)},
      {"poly_form", {[](RunConfig& c, const std::string&, const std::string& v) { c.poly_form = parse_poly_form(v); },
                     [](const RunConfig& c) { return std::string(to_string(c.poly_form)); }}},
      {"momentum", double_field(&RunConfig::momentum)},
      {"weight_decay", double_field(&RunConfig::weight_decay)},
      {"final_weight", double_field(&RunConfig::final_weight)},
      {"aux_weight", double_field(&RunConfig::aux_weight)},
      {"aux", {[](RunConfig& c, const std::string& k, const std::string& v) { c.aux = parse_bool(k, v); },
               [](const RunConfig& c) { return std::string(c.aux ? "on" : "off"); }}},
      {"module", {[](RunConfig& c, const std::string&, const std::string& v) { c.module = parse_module_kind(v); },
                  [](const RunConfig& c) { return std::string(to_string(c.module)); }}},
      {"relation_scheme",
       {[](RunConfig& c, const std::string&, const std::string& v) { c.relation_scheme = parse_relation_scheme(v); },
        [](const RunConfig& c) { return std::string(to_string(c.relation_scheme)); }}},
      {"key_channels", size_field(&RunConfig::key_channels)},
      {"mid_channels", size_field(&RunConfig::mid_channels)},
      {"stem_channels", size_field(&RunConfig::stem_channels)},
      {"feat_channels", size_field(&RunConfig::feat_channels)},
      {"attention_scale",
       {[](RunConfig& c, const std::string&, const std::string& v) { c.attention_scale = parse_attention_scale(v); },
        [](const RunConfig& c) { return std::string(to_string(c.attention_scale)); }}},
      {"da_regions", size_field(&RunConfig::da_regions)},
      {"shapes_min", size_field(&RunConfig::shapes_min)},
      {"shapes_max", size_field(&RunConfig::shapes_max)},
      {"classes_per_scene", size_field(&RunConfig::classes_per_scene)},
      {"radius_min", double_field(&RunConfig::radius_min)},
      {"radius_max", double_field(&RunConfig::radius_max)},
      {"background", double_field(&RunConfig::background)},
      {"class_spread", double_field(&RunConfig::class_spread)},
      {"noise", double_field(&RunConfig::noise)},
      {"illumination", double_field(&RunConfig::illumination)},
      {"gain", double_field(&RunConfig::gain)},
      {"ablate_seeds", size_field(&RunConfig::ablate_seeds)},
      {"data_dir", {[](RunConfig& c, const std::string&, const std::string& v) { c.data_dir = v; },
                    [](const RunConfig& c) { return c.data_dir; }}},
      {"out_dir", {[](RunConfig& c, const std::string&, const std::string& v) { c.out_dir = v; },
                   [](const RunConfig& c) { return c.out_dir; }}},
  };
  return f;
}

}  // namespace

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> k = [] {
    std::vector<std::string> out;
    for (const auto& [name, f] : fields()) out.push_back(name);
    return out;
  }();
  return k;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  for (const auto& [name, f] : fields()) {
    if (name == key) {
      try {
        f.set(*this, key, value);
      } catch (const ConfigError&) {
        throw;
      } catch (const std::exception& e) {
        throw ConfigError(key + ": " + e.what());
      }
      return;
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

void RunConfig::apply_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("expected key=value, got '" + assignment + "'");
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

void RunConfig::apply_text(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    try {
      apply_override(t);
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
}

void RunConfig::load_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  apply_text(ss.str());
}

ModuleKind RunConfig::effective_module() const {
  if (module != ModuleKind::ocr) return module;
  switch (relation_scheme) {
    case RelationScheme::ocr: return ModuleKind::ocr;
    case RelationScheme::da: return ModuleKind::da;
    case RelationScheme::acf: return ModuleKind::acf;
  }
  return ModuleKind::ocr;
}

void RunConfig::validate() const {
  if (module != ModuleKind::ocr && relation_scheme != RelationScheme::ocr) {
    throw ConfigError("relation_scheme only applies to module=ocr");
  }
  if (grid < 2) throw ConfigError("grid must be >= 2");
  if (train_scenes < 1 || eval_scenes < 1) throw ConfigError("scene counts must be >= 1");
  if (batch < 1) throw ConfigError("batch must be >= 1");
  if (!(base_lr > 0.0)) throw ConfigError("base_lr must be positive");
  if (!(poly_power > 0.0)) throw ConfigError("poly_power must be positive");
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("momentum must be in [0, 1)");
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
  if (ablate_seeds < 1) throw ConfigError("ablate_seeds must be >= 1");
  scene_config().validate();
  model_config().validate();
  loss_config().validate();
}

std::string RunConfig::to_text() const {
  std::string out;
  for (const auto& [name, f] : fields()) out += name + "=" + f.get(*this) + "\n";
  return out;
}

SceneConfig RunConfig::scene_config() const {
  SceneConfig s;
  s.height = grid;
  s.width = grid;
  s.num_classes = classes;
  s.min_shapes = shapes_min;
  s.max_shapes = shapes_max;
  s.classes_per_scene = classes_per_scene;
  s.min_radius = radius_min;
  s.max_radius = radius_max;
  s.background = background;
  s.class_spread = class_spread;
  s.noise = noise;
  s.illumination = illumination;
  s.gain = gain;
  return s;
}

ModelConfig RunConfig::model_config() const {
  ModelConfig m;
  m.kind = effective_module();
  m.num_classes = classes;
  m.in_channels = feat_channels + 2;
  m.key_channels = key_channels;
  m.mid_channels = mid_channels;
  m.stem_channels = stem_channels;
  m.attention_scale = attention_scale;
  m.da_regions = da_regions;
  if (m.kind == ModuleKind::aspp_lite) m.aspp_rates = scaled_aspp_rates(grid).rates;
  return m;
}

LossConfig RunConfig::loss_config() const {
  LossConfig l;
  l.final_weight = final_weight;
  l.aux_weight = aux ? aux_weight : 0.0;
  return l;
}

PolySchedule RunConfig::schedule() const {
  return {base_lr, iterations, poly_power, poly_form};
}

}  // namespace ocrseg
