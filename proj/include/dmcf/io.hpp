#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dmcf/network.hpp"
#include "dmcf/state.hpp"

namespace dmcf {

inline constexpr std::uint32_t kFrameFileVersion = 1;
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Frame file layout (all little-endian):
///   "DMCF", u32 version,
///   u32 name length, name bytes,
///   u32 d, f64 dt, f64 particle radius, f64 gravity[d],
///   u64 frame count F, u64 particle count N, u8 type[N] (0 fluid, 1 boundary),
///   F x (f32 positions[N*d], f32 velocities[N*d]),
///   f32 normals[N*d].
/// Masses are not stored (unit masses).
void write_trajectory(const std::filesystem::path& path, const Trajectory& traj);
Trajectory read_trajectory(const std::filesystem::path& path);

std::vector<char> encode_trajectory(const Trajectory& traj);
Trajectory decode_trajectory(const std::vector<char>& bytes);

/// Checkpoint layout (all little-endian):
///   "DMCF", u32 version,
///   config block: i32 d, f64 particle_radius, f64 radius_scale, i32 branches,
///     i32 pre_channels, i32 l1[branches], i32 exchange layer count E,
///     i32 exchange[E][branches], i32 l4_channels, i32 kernel_size,
///     i32 head_kernel_size, u8 head (0 ascc, 1 cconv), u8 sampling (0 voxel,
///     1 fps), u8 gravity_normalize, u8 boundary_all_layers,
///     f64 velocity_feature_scale, f64 accel_feature_scale, f64 output_scale,
///   u32 tensor count, then per tensor: u32 name length, name bytes,
///     u32 rank, u64 dims[rank], f32 values.
std::vector<char> encode_checkpoint(const ArchitectureConfig& config, const ModelParams& params);
void decode_checkpoint(const std::vector<char>& bytes, ArchitectureConfig& config,
                       ModelParams& params);
void write_checkpoint(const std::filesystem::path& path, const ArchitectureConfig& config,
                      const ModelParams& params);
void read_checkpoint(const std::filesystem::path& path, ArchitectureConfig& config,
                     ModelParams& params);

/// Rounds every parameter to single precision (what a checkpoint stores).
void round_to_float(ModelParams& params);

struct ManifestEntry {
  std::string name;
  std::string file;
  std::string kind;
  std::uint64_t seed = 0;
};

/// Dataset directory: one frame file per scene plus manifest.txt with one
/// "name file kind seed" line per scene.
void write_dataset(const std::filesystem::path& dir, const std::vector<Trajectory>& scenes,
                   const std::string& kind, std::uint64_t seed);
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& dir);
std::vector<Trajectory> read_dataset(const std::filesystem::path& dir);

std::vector<char> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::vector<char>& bytes);
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace dmcf
