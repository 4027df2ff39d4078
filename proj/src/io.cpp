#include "dmcf/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace dmcf {

static_assert(std::endian::native == std::endian::little,
              "file formats are written with native little-endian stores");

namespace {

constexpr char kMagic[4] = {'D', 'M', 'C', 'F'};

class Writer {
 public:
  template <typename T>
  void put(T v) {
    const char* p = reinterpret_cast<const char*>(&v);
    buf_.insert(buf_.end(), p, p + sizeof(T));
  }
  void bytes(const void* p, std::size_t n) {
    const char* c = static_cast<const char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  void str(const std::string& s) {
    put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  void floats(const Matrix& m) {
    for (double v : m.storage()) put<float>(static_cast<float>(v));
  }
  std::vector<char> take() { return std::move(buf_); }

 private:
  std::vector<char> buf_;
};

class Reader {
 public:
  explicit Reader(const std::vector<char>& b) : buf_(b) {}
  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, buf_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string str() {
    const auto n = get<std::uint32_t>();
    need(n);
    std::string s(buf_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  Matrix floats(std::size_t rows, std::size_t cols) {
    Matrix m(rows, cols);
    for (double& v : m.storage()) v = static_cast<double>(get<float>());
    return m;
  }
  void magic(std::uint32_t expected_version, const char* what) {
    need(4);
    if (std::memcmp(buf_.data(), kMagic, 4) != 0)
      throw InputError(std::string(what) + ": bad magic");
    pos_ = 4;
    const auto version = get<std::uint32_t>();
    if (version != expected_version)
      throw InputError(std::string(what) + ": unsupported format version " + std::to_string(version));
  }
  bool done() const { return pos_ == buf_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > buf_.size()) throw InputError("file is truncated");
  }
  const std::vector<char>& buf_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<char> encode_trajectory(const Trajectory& traj) {
  if (traj.frames.empty()) throw InputError("trajectory has no frames");
  const ParticleState& f0 = traj.frames.front();
  const std::size_t n = f0.size();
  const std::size_t d = static_cast<std::size_t>(f0.dim());
  if (traj.gravity.size() != d) throw InputError("gravity does not match the frame dimension");
  Writer w;
  w.bytes(kMagic, 4);
  w.put<std::uint32_t>(kFrameFileVersion);
  w.str(traj.name);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(d));
  w.put<double>(traj.dt);
  w.put<double>(traj.particle_radius);
  for (double g : traj.gravity) w.put<double>(g);
  w.put<std::uint64_t>(traj.frames.size());
  w.put<std::uint64_t>(n);
  for (ParticleType t : f0.types) w.put<std::uint8_t>(static_cast<std::uint8_t>(t));
  for (const auto& f : traj.frames) {
    if (f.size() != n || f.types != f0.types) throw InputError("frames differ in particles");
    w.floats(f.positions);
    w.floats(f.velocities);
  }
  w.floats(f0.normals);
  return w.take();
}

Trajectory decode_trajectory(const std::vector<char>& bytes) {
  Reader r(bytes);
  r.magic(kFrameFileVersion, "frame file");
  Trajectory t;
  t.name = r.str();
  const auto d = r.get<std::uint32_t>();
  if (d < 1 || d > 3) throw InputError("frame file: invalid dimension");
  t.dt = r.get<double>();
  t.particle_radius = r.get<double>();
  for (std::uint32_t a = 0; a < d; ++a) t.gravity.push_back(r.get<double>());
  const auto frames = r.get<std::uint64_t>();
  const auto n = r.get<std::uint64_t>();
  if (frames == 0) throw InputError("frame file: no frames");
  if (n > (1u << 28) || frames > (1u << 24)) throw InputError("frame file: implausible sizes");
  std::vector<ParticleType> types(n);
  for (auto& ty : types) {
    const auto v = r.get<std::uint8_t>();
    if (v > 1) throw InputError("frame file: unknown particle type");
    ty = static_cast<ParticleType>(v);
  }
  for (std::uint64_t k = 0; k < frames; ++k) {
    ParticleState s;
    s.positions = r.floats(n, d);
    s.velocities = r.floats(n, d);
    s.accelerations = Matrix(n, d);
    s.masses.assign(n, 1.0);
    s.types = types;
    t.frames.push_back(std::move(s));
  }
  const Matrix normals = r.floats(n, d);
  if (!r.done()) throw InputError("frame file: trailing bytes");
  for (auto& s : t.frames) s.normals = normals;
  return t;
}

std::vector<char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  return std::vector<char>(std::istreambuf_iterator<char>(in), {});
}

void write_file(const std::filesystem::path& path, const std::vector<char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw InputError("failed writing " + path.string());
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  write_file(path, std::vector<char>(text.begin(), text.end()));
}

void write_trajectory(const std::filesystem::path& path, const Trajectory& traj) {
  write_file(path, encode_trajectory(traj));
}

Trajectory read_trajectory(const std::filesystem::path& path) {
  return decode_trajectory(read_file(path));
}

std::vector<char> encode_checkpoint(const ArchitectureConfig& c, const ModelParams& params) {
  c.validate();
  Writer w;
  w.bytes(kMagic, 4);
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put<std::int32_t>(c.dim);
  w.put<double>(c.particle_radius);
  w.put<double>(c.radius_scale);
  w.put<std::int32_t>(c.branches);
  w.put<std::int32_t>(c.pre_channels);
  for (int v : c.l1_channels) w.put<std::int32_t>(v);
  w.put<std::int32_t>(static_cast<std::int32_t>(c.exchange_channels.size()));
  for (const auto& layer : c.exchange_channels)
    for (int v : layer) w.put<std::int32_t>(v);
  w.put<std::int32_t>(c.l4_channels);
  w.put<std::int32_t>(c.kernel_size);
  w.put<std::int32_t>(c.head_kernel_size);
  w.put<std::uint8_t>(c.head == HeadKind::ascc ? 0 : 1);
  w.put<std::uint8_t>(c.sampling == Sampling::voxel ? 0 : 1);
  w.put<std::uint8_t>(c.gravity_normalize ? 1 : 0);
  w.put<std::uint8_t>(c.boundary_all_layers ? 1 : 0);
  w.put<double>(c.velocity_feature_scale);
  w.put<double>(c.accel_feature_scale);
  w.put<double>(c.output_scale);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(params.tensors.size()));
  for (std::size_t k = 0; k < params.tensors.size(); ++k) {
    const Matrix& m = params.tensors[k];
    w.str(params.names[k]);
    w.put<std::uint32_t>(2);
    w.put<std::uint64_t>(m.rows());
    w.put<std::uint64_t>(m.cols());
    w.floats(m);
  }
  return w.take();
}

void decode_checkpoint(const std::vector<char>& bytes, ArchitectureConfig& c, ModelParams& params) {
  Reader r(bytes);
  r.magic(kCheckpointVersion, "checkpoint");
  auto count = [](std::int32_t v) {
    if (v < 0 || v > 4096) throw InputError("checkpoint: implausible size field");
    return v;
  };
  ArchitectureConfig out;
  out.dim = r.get<std::int32_t>();
  out.particle_radius = r.get<double>();
  out.radius_scale = r.get<double>();
  out.branches = count(r.get<std::int32_t>());
  out.pre_channels = r.get<std::int32_t>();
  out.l1_channels.clear();
  for (int j = 0; j < out.branches; ++j) out.l1_channels.push_back(r.get<std::int32_t>());
  const int layers = count(r.get<std::int32_t>());
  out.exchange_channels.assign(layers, {});
  for (auto& layer : out.exchange_channels)
    for (int j = 0; j < out.branches; ++j) layer.push_back(r.get<std::int32_t>());
  out.l4_channels = r.get<std::int32_t>();
  out.kernel_size = r.get<std::int32_t>();
  out.head_kernel_size = r.get<std::int32_t>();
  out.head = r.get<std::uint8_t>() == 0 ? HeadKind::ascc : HeadKind::cconv;
  out.sampling = r.get<std::uint8_t>() == 0 ? Sampling::voxel : Sampling::fps;
  out.gravity_normalize = r.get<std::uint8_t>() != 0;
  out.boundary_all_layers = r.get<std::uint8_t>() != 0;
  out.velocity_feature_scale = r.get<double>();
  out.accel_feature_scale = r.get<double>();
  out.output_scale = r.get<double>();
  try {
    out.validate();
  } catch (const ConfigError& e) {
    throw InputError(std::string("checkpoint: ") + e.what());
  }
  const auto layout = parameter_layout(out);
  const auto n = r.get<std::uint32_t>();
  if (n != layout.size()) throw InputError("checkpoint: tensor count does not match the config");
  ModelParams p;
  for (std::uint32_t k = 0; k < n; ++k) {
    std::string name = r.str();
    const auto rank = r.get<std::uint32_t>();
    if (rank != 2) throw InputError("checkpoint: tensors must have rank 2");
    const auto rows = r.get<std::uint64_t>();
    const auto cols = r.get<std::uint64_t>();
    if (name != layout[k].name || rows != layout[k].rows || cols != layout[k].cols)
      throw InputError("checkpoint: tensor " + name + " does not match the config");
    p.names.push_back(std::move(name));
    p.tensors.push_back(r.floats(rows, cols));
  }
  if (!r.done()) throw InputError("checkpoint: trailing bytes");
  c = std::move(out);
  params = std::move(p);
}

void write_checkpoint(const std::filesystem::path& path, const ArchitectureConfig& config,
                      const ModelParams& params) {
  write_file(path, encode_checkpoint(config, params));
}

void read_checkpoint(const std::filesystem::path& path, ArchitectureConfig& config,
                     ModelParams& params) {
  decode_checkpoint(read_file(path), config, params);
}

void round_to_float(ModelParams& params) {
  for (auto& t : params.tensors)
    for (double& v : t.storage()) v = static_cast<double>(static_cast<float>(v));
}

void write_dataset(const std::filesystem::path& dir, const std::vector<Trajectory>& scenes,
                   const std::string& kind, std::uint64_t seed) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw InputError("cannot create " + dir.string());
  std::ostringstream manifest;
  for (const auto& s : scenes) {
    const std::string file = s.name + ".dmcf";
    write_trajectory(dir / file, s);
    manifest << s.name << ' ' << file << ' ' << kind << ' ' << seed << '\n';
  }
  write_text(dir / "manifest.txt", manifest.str());
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.txt");
  if (!in) throw InputError("cannot open " + (dir / "manifest.txt").string());
  std::vector<ManifestEntry> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    ManifestEntry e;
    if (!(ls >> e.name >> e.file >> e.kind >> e.seed)) throw InputError("malformed manifest line: " + line);
    out.push_back(std::move(e));
  }
  return out;
}

std::vector<Trajectory> read_dataset(const std::filesystem::path& dir) {
  std::vector<Trajectory> out;
  for (const auto& e : read_manifest(dir)) out.push_back(read_trajectory(dir / e.file));
  return out;
}

}  // namespace dmcf
