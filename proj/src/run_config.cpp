#include "dmcf/run_config.hpp"

#include <algorithm>
#include <charconv>
#include <functional>
#include <sstream>

#include "dmcf/io.hpp"

namespace dmcf {

const std::vector<std::string>& variant_names() {
  static const std::vector<std::string> names{"base",       "ascc", "multiscale_fps", "voxelize",
                                              "preprocess", "ours", "nosym"};
  return names;
}

void apply_variant(const std::string& variant, ArchitectureConfig& arch, TrainConfig& train) {
  const auto& names = variant_names();
  const auto it = std::find(names.begin(), names.end(), variant);
  if (it == names.end()) throw ConfigError("unknown variant " + variant);
  const ArchitectureConfig full = default_architecture(arch.dim);
  const long level = variant == "nosym" ? 5 : it - names.begin();
  arch.head = level >= 1 && variant != "nosym" ? HeadKind::ascc : HeadKind::cconv;
  if (level >= 2) {
    arch.branches = full.branches;
    arch.l1_channels = full.l1_channels;
    arch.exchange_channels = full.exchange_channels;
  } else {
    arch.branches = 1;
    arch.l1_channels = {full.l1_channels[0]};
    arch.exchange_channels.clear();
    for (const auto& layer : full.exchange_channels) arch.exchange_channels.push_back({layer[0]});
  }
  arch.sampling = level == 2 ? Sampling::fps : Sampling::voxel;
  train.warmup = level >= 4;
  arch.gravity_normalize = level >= 5;
  arch.boundary_all_layers = level >= 5;
}

namespace {

std::vector<int> range_counts(int lo, int hi) {
  std::vector<int> v;
  for (int i = lo; i <= hi; ++i) v.push_back(i);
  return v;
}

}  // namespace

RunConfig default_run_config(int dim) {
  if (dim < 1 || dim > 3) throw ConfigError("dim must be 1, 2 or 3");
  RunConfig c;
  c.arch = default_architecture(dim);
  c.solver.gravity.assign(static_cast<std::size_t>(dim), 0.0);
  c.solver.gravity[dim >= 2 ? 1 : 0] = -9.81;
  if (dim == 1) {
    c.scene.kind = SceneKind::column;
    c.scene.counts = range_counts(1, 40);
    for (int k = 3; k <= 40; k += 4) c.holdout.push_back("column_" + std::to_string(k));
    // Column compression is ~1e-4 m; 0.1 r of noise buries it.
    c.train.noise_ratio = 0.02;
  } else {
    c.scene.kind = SceneKind::drops2d;
  }
  apply_variant(c.variant, c.arch, c.train);
  return c;
}

std::vector<int> parse_int_list(const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item.erase(std::remove_if(item.begin(), item.end(), ::isspace), item.end());
    if (item.empty()) continue;
    const auto dash = item.find('-', 1);
    auto to_int = [&](const std::string& s) {
      int v = 0;
      const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
      if (r.ec != std::errc() || r.ptr != s.data() + s.size())
        throw ConfigError("not an integer list: " + text);
      return v;
    };
    if (dash != std::string::npos) {
      const int lo = to_int(item.substr(0, dash)), hi = to_int(item.substr(dash + 1));
      if (hi < lo) throw ConfigError("empty range in " + text);
      for (int v = lo; v <= hi; ++v) out.push_back(v);
    } else {
      out.push_back(to_int(item));
    }
  }
  return out;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double to_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double d = 0.0;
  try {
    d = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || v.empty()) throw ConfigError(key + ": not a number: " + v);
  return d;
}

long long to_integer(const std::string& key, const std::string& v) {
  long long x = 0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), x);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size()) throw ConfigError(key + ": not an integer: " + v);
  return x;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key + ": not a boolean: " + v);
}

std::vector<double> to_doubles(const std::string& key, const std::string& v) {
  std::vector<double> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(to_double(key, trim(item)));
  return out;
}

std::vector<std::string> to_strings(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!trim(item).empty()) out.push_back(trim(item));
  return out;
}

std::string num(double v);

template <typename T>
std::string join(const std::vector<T>& v, const char* sep = ",") {
  std::ostringstream os;
  for (std::size_t i = 0; i < v.size(); ++i) {
    os << (i ? sep : "");
    if constexpr (std::is_floating_point_v<T>) os << num(v[i]);
    else os << v[i];
  }
  return os.str();
}

std::string num(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

struct Key {
  std::string name;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

const std::vector<Key>& keys() {
  using C = RunConfig;
  using S = const std::string&;
  static const std::vector<Key> k = {
      {"seed", [](C& c, S v) { c.seed = static_cast<std::uint64_t>(to_integer("seed", v)); c.train.seed = c.seed; },
       [](const C& c) { return std::to_string(c.seed); }},
      {"dim", [](C&, S) {}, [](const C& c) { return std::to_string(c.arch.dim); }},
      {"variant", [](C&, S) {}, [](const C& c) { return c.variant; }},
      {"particle_radius",
       [](C& c, S v) { c.arch.particle_radius = c.solver.particle_radius = to_double("particle_radius", v); },
       [](const C& c) { return num(c.arch.particle_radius); }},
      {"gravity", [](C& c, S v) { c.solver.gravity = to_doubles("gravity", v); },
       [](const C& c) { return join(c.solver.gravity); }},
      {"arch.radius_scale", [](C& c, S v) { c.arch.radius_scale = to_double("arch.radius_scale", v); },
       [](const C& c) { return num(c.arch.radius_scale); }},
      {"arch.branches", [](C& c, S v) { c.arch.branches = static_cast<int>(to_integer("arch.branches", v)); },
       [](const C& c) { return std::to_string(c.arch.branches); }},
      {"arch.pre_channels", [](C& c, S v) { c.arch.pre_channels = static_cast<int>(to_integer("arch.pre_channels", v)); },
       [](const C& c) { return std::to_string(c.arch.pre_channels); }},
      {"arch.l1_channels", [](C& c, S v) { c.arch.l1_channels = parse_int_list(v); },
       [](const C& c) { return join(c.arch.l1_channels); }},
      {"arch.exchange_channels",
       [](C& c, S v) {
         c.arch.exchange_channels.clear();
         std::stringstream ss(v);
         std::string layer;
         while (std::getline(ss, layer, ';'))
           if (!trim(layer).empty()) c.arch.exchange_channels.push_back(parse_int_list(layer));
       },
       [](const C& c) {
         std::vector<std::string> layers;
         for (const auto& l : c.arch.exchange_channels) layers.push_back(join(l));
         return join(layers, ";");
       }},
      {"arch.l4_channels", [](C& c, S v) { c.arch.l4_channels = static_cast<int>(to_integer("arch.l4_channels", v)); },
       [](const C& c) { return std::to_string(c.arch.l4_channels); }},
      {"arch.kernel_size", [](C& c, S v) { c.arch.kernel_size = static_cast<int>(to_integer("arch.kernel_size", v)); },
       [](const C& c) { return std::to_string(c.arch.kernel_size); }},
      {"arch.head_kernel_size",
       [](C& c, S v) { c.arch.head_kernel_size = static_cast<int>(to_integer("arch.head_kernel_size", v)); },
       [](const C& c) { return std::to_string(c.arch.head_kernel_size); }},
      {"arch.head",
       [](C& c, S v) {
         if (v == "ascc") c.arch.head = HeadKind::ascc;
         else if (v == "cconv") c.arch.head = HeadKind::cconv;
         else throw ConfigError("arch.head must be ascc or cconv");
       },
       [](const C& c) { return std::string(c.arch.head == HeadKind::ascc ? "ascc" : "cconv"); }},
      {"arch.sampling",
       [](C& c, S v) {
         if (v == "voxel") c.arch.sampling = Sampling::voxel;
         else if (v == "fps") c.arch.sampling = Sampling::fps;
         else throw ConfigError("arch.sampling must be voxel or fps");
       },
       [](const C& c) { return std::string(c.arch.sampling == Sampling::voxel ? "voxel" : "fps"); }},
      {"arch.gravity_normalize", [](C& c, S v) { c.arch.gravity_normalize = to_bool("arch.gravity_normalize", v); },
       [](const C& c) { return std::string(c.arch.gravity_normalize ? "true" : "false"); }},
      {"arch.boundary_all_layers",
       [](C& c, S v) { c.arch.boundary_all_layers = to_bool("arch.boundary_all_layers", v); },
       [](const C& c) { return std::string(c.arch.boundary_all_layers ? "true" : "false"); }},
      {"arch.velocity_feature_scale",
       [](C& c, S v) { c.arch.velocity_feature_scale = to_double("arch.velocity_feature_scale", v); },
       [](const C& c) { return num(c.arch.velocity_feature_scale); }},
      {"arch.accel_feature_scale",
       [](C& c, S v) { c.arch.accel_feature_scale = to_double("arch.accel_feature_scale", v); },
       [](const C& c) { return num(c.arch.accel_feature_scale); }},
      {"arch.output_scale", [](C& c, S v) { c.arch.output_scale = to_double("arch.output_scale", v); },
       [](const C& c) { return num(c.arch.output_scale); }},
      {"train.iterations", [](C& c, S v) { c.train.iterations = static_cast<int>(to_integer("train.iterations", v)); },
       [](const C& c) { return std::to_string(c.train.iterations); }},
      {"train.batch_size", [](C& c, S v) { c.train.batch_size = static_cast<int>(to_integer("train.batch_size", v)); },
       [](const C& c) { return std::to_string(c.train.batch_size); }},
      {"train.learning_rate", [](C& c, S v) { c.train.learning_rate = to_double("train.learning_rate", v); },
       [](const C& c) { return num(c.train.learning_rate); }},
      {"train.lr_decay_start",
       [](C& c, S v) { c.train.lr_decay_start = static_cast<int>(to_integer("train.lr_decay_start", v)); },
       [](const C& c) { return std::to_string(c.train.lr_decay_start); }},
      {"train.lr_decay_interval",
       [](C& c, S v) { c.train.lr_decay_interval = static_cast<int>(to_integer("train.lr_decay_interval", v)); },
       [](const C& c) { return std::to_string(c.train.lr_decay_interval); }},
      {"train.rollout_short",
       [](C& c, S v) { c.train.rollout_short = static_cast<int>(to_integer("train.rollout_short", v)); },
       [](const C& c) { return std::to_string(c.train.rollout_short); }},
      {"train.rollout_long",
       [](C& c, S v) { c.train.rollout_long = static_cast<int>(to_integer("train.rollout_long", v)); },
       [](const C& c) { return std::to_string(c.train.rollout_long); }},
      {"train.rollout_switch",
       [](C& c, S v) { c.train.rollout_switch = static_cast<int>(to_integer("train.rollout_switch", v)); },
       [](const C& c) { return std::to_string(c.train.rollout_switch); }},
      {"train.warmup", [](C& c, S v) { c.train.warmup = to_bool("train.warmup", v); },
       [](const C& c) { return std::string(c.train.warmup ? "true" : "false"); }},
      {"train.warmup_start",
       [](C& c, S v) { c.train.warmup_start = static_cast<int>(to_integer("train.warmup_start", v)); },
       [](const C& c) { return std::to_string(c.train.warmup_start); }},
      {"train.warmup_max", [](C& c, S v) { c.train.warmup_max = static_cast<int>(to_integer("train.warmup_max", v)); },
       [](const C& c) { return std::to_string(c.train.warmup_max); }},
      {"train.warmup_doubling", [](C& c, S v) { c.train.warmup_doubling = parse_int_list(v); },
       [](const C& c) { return join(c.train.warmup_doubling); }},
      {"train.noise_ratio", [](C& c, S v) { c.train.noise_ratio = to_double("train.noise_ratio", v); },
       [](const C& c) { return num(c.train.noise_ratio); }},
      {"train.density_threshold",
       [](C& c, S v) { c.train.density_threshold = to_double("train.density_threshold", v); },
       [](const C& c) { return num(c.train.density_threshold); }},
      {"train.log_interval",
       [](C& c, S v) { c.train.log_interval = static_cast<int>(to_integer("train.log_interval", v)); },
       [](const C& c) { return std::to_string(c.train.log_interval); }},
      {"train.checkpoint_interval",
       [](C& c, S v) { c.train.checkpoint_interval = static_cast<int>(to_integer("train.checkpoint_interval", v)); },
       [](const C& c) { return std::to_string(c.train.checkpoint_interval); }},
      {"train.holdout", [](C& c, S v) { c.holdout = to_strings(v); }, [](const C& c) { return join(c.holdout); }},
      {"solver.support_scale", [](C& c, S v) { c.solver.support_scale = to_double("solver.support_scale", v); },
       [](const C& c) { return num(c.solver.support_scale); }},
      {"solver.frame_dt", [](C& c, S v) { c.solver.frame_dt = to_double("solver.frame_dt", v); },
       [](const C& c) { return num(c.solver.frame_dt); }},
      {"solver.explicit_dt", [](C& c, S v) { c.solver.explicit_dt = to_double("solver.explicit_dt", v); },
       [](const C& c) { return num(c.solver.explicit_dt); }},
      {"solver.stiffness", [](C& c, S v) { c.solver.stiffness = to_double("solver.stiffness", v); },
       [](const C& c) { return num(c.solver.stiffness); }},
      {"solver.viscosity", [](C& c, S v) { c.solver.viscosity = to_double("solver.viscosity", v); },
       [](const C& c) { return num(c.solver.viscosity); }},
      {"solver.rest_density", [](C& c, S v) { c.solver.rest_density = to_double("solver.rest_density", v); },
       [](const C& c) { return num(c.solver.rest_density); }},
      {"solver.tolerance", [](C& c, S v) { c.solver.tolerance = to_double("solver.tolerance", v); },
       [](const C& c) { return num(c.solver.tolerance); }},
      {"solver.max_iterations",
       [](C& c, S v) { c.solver.max_iterations = static_cast<int>(to_integer("solver.max_iterations", v)); },
       [](const C& c) { return std::to_string(c.solver.max_iterations); }},
      {"solver.relaxation", [](C& c, S v) { c.solver.relaxation = to_double("solver.relaxation", v); },
       [](const C& c) { return num(c.solver.relaxation); }},
      {"scene.kind",
       [](C& c, S v) {
         if (v == "column") c.scene.kind = SceneKind::column;
         else if (v == "freefall") c.scene.kind = SceneKind::freefall;
         else if (v == "drops2d") c.scene.kind = SceneKind::drops2d;
         else throw ConfigError("scene.kind must be column, freefall or drops2d");
       },
       [](const C& c) {
         return std::string(c.scene.kind == SceneKind::column     ? "column"
                            : c.scene.kind == SceneKind::freefall ? "freefall"
                                                                  : "drops2d");
       }},
      {"scene.counts", [](C& c, S v) { c.scene.counts = parse_int_list(v); },
       [](const C& c) { return join(c.scene.counts); }},
      {"scene.frames", [](C& c, S v) { c.scene.frames = static_cast<std::size_t>(to_integer("scene.frames", v)); },
       [](const C& c) { return std::to_string(c.scene.frames); }},
      {"scene.height", [](C& c, S v) { c.scene.height = to_double("scene.height", v); },
       [](const C& c) { return num(c.scene.height); }},
      {"scene.drop_radius", [](C& c, S v) { c.scene.drops.drop_radius = to_double("scene.drop_radius", v); },
       [](const C& c) { return num(c.scene.drops.drop_radius); }},
      {"scene.separation", [](C& c, S v) { c.scene.drops.separation = to_double("scene.separation", v); },
       [](const C& c) { return num(c.scene.drops.separation); }},
      {"scene.speed", [](C& c, S v) { c.scene.drops.speed = to_double("scene.speed", v); },
       [](const C& c) { return num(c.scene.drops.speed); }},
      {"eval.noise_ratio", [](C& c, S v) { c.eval_noise_ratio = to_double("eval.noise_ratio", v); },
       [](const C& c) { return num(c.eval_noise_ratio); }},
      {"eval.sampling_ratio", [](C& c, S v) { c.eval_sampling_ratio = to_double("eval.sampling_ratio", v); },
       [](const C& c) { return num(c.eval_sampling_ratio); }},
      {"eval.bins", [](C& c, S v) { c.metrics.bins = static_cast<int>(to_integer("eval.bins", v)); },
       [](const C& c) { return std::to_string(c.metrics.bins); }},
      {"eval.emd_cap", [](C& c, S v) { c.metrics.emd_cap = static_cast<std::size_t>(to_integer("eval.emd_cap", v)); },
       [](const C& c) { return std::to_string(c.metrics.emd_cap); }},
  };
  return k;
}

const Key* find_key(const std::string& name) {
  for (const auto& k : keys())
    if (k.name == name) return &k;
  return nullptr;
}

}  // namespace

RunConfig parse_run_config(const std::string& text) {
  std::vector<std::pair<std::string, std::string>> entries;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (!find_key(key)) throw ConfigError("unknown config key " + key);
    entries.emplace_back(key, value);
  }
  int dim = 2;
  std::string variant = "ours";
  for (const auto& [k, v] : entries) {
    if (k == "dim") dim = static_cast<int>(to_integer("dim", v));
    if (k == "variant") variant = v;
  }
  RunConfig c = default_run_config(dim);
  c.variant = variant;
  apply_variant(variant, c.arch, c.train);
  for (const auto& [k, v] : entries) find_key(k)->set(c, v);
  c.arch.validate();
  c.train.validate();
  c.solver.validate(dim);
  if (c.scene.kind == SceneKind::drops2d && dim != 2) throw ConfigError("drops2d scenes are two-dimensional");
  if (c.scene.kind != SceneKind::drops2d && dim != 1) throw ConfigError("column scenes are one-dimensional");
  if (!(c.eval_sampling_ratio > 0.0 && c.eval_sampling_ratio <= 1.0))
    throw ConfigError("eval.sampling_ratio must lie in (0, 1]");
  if (!(c.eval_noise_ratio >= 0.0)) throw ConfigError("eval.noise_ratio must be non-negative");
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  return parse_run_config(std::string(bytes.begin(), bytes.end()));
}

std::string dump_run_config(const RunConfig& config) {
  std::ostringstream os;
  for (const auto& k : keys()) os << k.name << " = " << k.get(config) << '\n';
  return os.str();
}

}  // namespace dmcf
