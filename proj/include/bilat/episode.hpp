#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "bilat/common.hpp"

namespace bilat {

struct CameraStream {
  int width = 64;
  int height = 48;
  std::vector<uint8_t> pixels;  // frame-major RGB8, frames * 3*width*height bytes

  size_t frame_bytes() const { return static_cast<size_t>(3) * width * height; }
  const uint8_t* frame(int64_t m) const { return pixels.data() + m * frame_bytes(); }
};

struct FrameStore {
  std::vector<CameraStream> cameras;
};

// One recorded session: time-aligned leader/follower joint streams at the
// control rate, camera frames at the image rate, and the instruction that was
// spoken while demonstrating. Frame storage is shared (DABI offsets alias the
// same frames).
struct Episode {
  std::string task = "cup";
  std::string instruction_raw;
  std::string instruction;  // normalized
  int control_rate = 1000;  // Hz
  int image_rate = 100;     // Hz
  int joint_count = 5;      // per arm
  int arm_count = 2;        // robots total (leaders + followers)
  uint64_t seed = 0;
  int64_t samples = 0;  // T
  int64_t frames = 0;   // M per camera
  std::vector<float> leader;    // T x (N*L) x 3 row-major: angle, velocity, torque
  std::vector<float> follower;  // same layout
  std::shared_ptr<const FrameStore> camera;
  nlohmann::json annotations = nlohmann::json::object();

  int leader_arms() const { return arm_count / 2; }
  int channels() const { return joint_count * leader_arms() * 3; }
  int ticks_per_frame() const { return control_rate / image_rate; }
  // nearest-preceding camera frame for joint sample i (causal pairing)
  int64_t frame_for_sample(int64_t i) const { return i / ticks_per_frame(); }

  float& at(std::vector<float>& s, int64_t t, int arm, int joint, int field);
  double value(bool leader_side, int64_t t, int arm, int joint, int field) const;

  void validate() const;  // structural invariants; throws FormatError
};

// BLAT1 container: magic "BLAT1\0", u32 header length, UTF-8 JSON header,
// then little-endian float32 leader/follower blocks and per-camera RGB8
// frame blocks. Round-trips are bit-exact.
void write_episode(const Episode& episode, const std::filesystem::path& path);
Episode read_episode(const std::filesystem::path& path);

struct DabiConfig {
  int source_rate = 1000;
  int target_rate = 100;

  int factor() const;
  void validate() const;
};

// Phase-offset decimation: offset-o episode takes joint samples
// o, o+factor, o+2*factor, ... bit-exactly; frames are shared by reference.
std::vector<Episode> dabi_augment(const Episode& episode, const DabiConfig& cfg);

// Plain-text manifest, one episode path per line (relative to the manifest).
void write_manifest(const std::filesystem::path& manifest,
                    const std::vector<std::filesystem::path>& episodes);
std::vector<std::filesystem::path> read_manifest(const std::filesystem::path& manifest);

// Episode paths from a manifest file or a directory of *.blat files (sorted).
std::vector<std::filesystem::path> list_episodes(const std::filesystem::path& source);

}  // namespace bilat
