#include "bilat/episode.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>

namespace bilat {

namespace {

constexpr char kMagic[6] = {'B', 'L', 'A', 'T', '1', '\0'};

size_t stream_index(const Episode& e, int64_t t, int arm, int joint, int field) {
  return (static_cast<size_t>(t) * e.joint_count * e.leader_arms() +
          static_cast<size_t>(arm) * e.joint_count + joint) *
             3 +
         field;
}

}  // namespace

float& Episode::at(std::vector<float>& s, int64_t t, int arm, int joint, int field) {
  return s[stream_index(*this, t, arm, joint, field)];
}

double Episode::value(bool leader_side, int64_t t, int arm, int joint,
                      int field) const {
  const auto& s = leader_side ? leader : follower;
  return s[stream_index(*this, t, arm, joint, field)];
}

void Episode::validate() const {
  if (control_rate <= 0 || image_rate <= 0 || control_rate % image_rate != 0) {
    throw FormatError("episode: control_rate must be a positive multiple of image_rate");
  }
  if (arm_count != 2 && arm_count != 4) {
    throw FormatError("episode: arm_count must be 2 or 4");
  }
  if (joint_count <= 0) throw FormatError("episode: joint_count must be > 0");
  if (samples <= 0) throw FormatError("episode: no samples");
  if (samples != frames * ticks_per_frame()) {
    throw FormatError("episode: T/M must equal control_rate/image_rate exactly");
  }
  const size_t expect = static_cast<size_t>(samples) * channels();
  if (leader.size() != expect || follower.size() != expect) {
    throw FormatError("episode: stream length mismatch");
  }
  for (float v : leader) {
    if (!std::isfinite(v)) throw FormatError("episode: non-finite leader sample");
  }
  for (float v : follower) {
    if (!std::isfinite(v)) throw FormatError("episode: non-finite follower sample");
  }
  if (!camera) throw FormatError("episode: missing frame store");
  for (const auto& cam : camera->cameras) {
    if (cam.pixels.size() != cam.frame_bytes() * static_cast<size_t>(frames)) {
      throw FormatError("episode: camera byte length != frames * 3*w*h");
    }
  }
}

// ---------------------------------------------------------------------------
// BLAT1 io

namespace {

void append_u32(std::vector<uint8_t>& buf, uint32_t v) {
  buf.insert(buf.end(), reinterpret_cast<const uint8_t*>(&v),
             reinterpret_cast<const uint8_t*>(&v) + 4);
}

void append_bytes(std::vector<uint8_t>& buf, const void* p, size_t n) {
  const auto* b = static_cast<const uint8_t*>(p);
  buf.insert(buf.end(), b, b + n);
}

}  // namespace

void write_episode(const Episode& episode, const std::filesystem::path& path) {
  episode.validate();

  nlohmann::json header;
  header["task"] = episode.task;
  header["instruction_raw"] = episode.instruction_raw;
  header["instruction"] = episode.instruction;
  header["control_rate"] = episode.control_rate;
  header["image_rate"] = episode.image_rate;
  header["joint_count"] = episode.joint_count;
  header["arm_count"] = episode.arm_count;
  header["seed"] = episode.seed;
  header["samples"] = episode.samples;
  header["frames"] = episode.frames;
  nlohmann::json cams = nlohmann::json::array();
  for (const auto& c : episode.camera->cameras) {
    cams.push_back({{"width", c.width}, {"height", c.height}});
  }
  header["cameras"] = cams;
  header["annotations"] = episode.annotations;
  const std::string hs = header.dump();

  std::vector<uint8_t> buf;
  append_bytes(buf, kMagic, sizeof(kMagic));
  append_u32(buf, static_cast<uint32_t>(hs.size()));
  append_bytes(buf, hs.data(), hs.size());
  append_bytes(buf, episode.leader.data(), episode.leader.size() * sizeof(float));
  append_bytes(buf, episode.follower.data(), episode.follower.size() * sizeof(float));
  for (const auto& c : episode.camera->cameras) {
    append_bytes(buf, c.pixels.data(), c.pixels.size());
  }

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open for write: " + path.string());
  out.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size()));
  if (!out) throw FormatError("write failed: " + path.string());
}

Episode read_episode(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open: " + path.string());
  std::vector<uint8_t> buf((std::istreambuf_iterator<char>(in)),
                           std::istreambuf_iterator<char>());

  if (buf.size() < sizeof(kMagic) + 4) {
    throw FormatError("truncated episode file (no header): " + path.string());
  }
  if (std::memcmp(buf.data(), kMagic, sizeof(kMagic)) != 0) {
    throw FormatError("bad magic (not a BLAT1 episode): " + path.string());
  }
  uint32_t hlen = 0;
  std::memcpy(&hlen, buf.data() + sizeof(kMagic), 4);
  const size_t hoff = sizeof(kMagic) + 4;
  if (hoff + hlen > buf.size()) {
    throw FormatError("header length mismatch at offset " + std::to_string(hoff) +
                      ": declared " + std::to_string(hlen) + " bytes, only " +
                      std::to_string(buf.size() - hoff) + " available");
  }
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(buf.begin() + hoff, buf.begin() + hoff + hlen);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("header is not valid JSON: ") + e.what());
  }

  Episode ep;
  try {
    ep.task = header.at("task").get<std::string>();
    ep.instruction_raw = header.at("instruction_raw").get<std::string>();
    ep.instruction = header.at("instruction").get<std::string>();
    ep.control_rate = header.at("control_rate").get<int>();
    ep.image_rate = header.at("image_rate").get<int>();
    ep.joint_count = header.at("joint_count").get<int>();
    ep.arm_count = header.at("arm_count").get<int>();
    ep.seed = header.at("seed").get<uint64_t>();
    ep.samples = header.at("samples").get<int64_t>();
    ep.frames = header.at("frames").get<int64_t>();
    ep.annotations = header.value("annotations", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("header field missing/typed wrong: ") + e.what());
  }

  auto store = std::make_shared<FrameStore>();
  size_t payload = 0;
  const size_t stream_bytes =
      static_cast<size_t>(ep.samples) * ep.channels() * sizeof(float);
  payload += 2 * stream_bytes;
  for (const auto& c : header.at("cameras")) {
    CameraStream cs;
    cs.width = c.at("width").get<int>();
    cs.height = c.at("height").get<int>();
    cs.pixels.resize(cs.frame_bytes() * static_cast<size_t>(ep.frames));
    payload += cs.pixels.size();
    store->cameras.push_back(std::move(cs));
  }
  const size_t data_off = hoff + hlen;
  if (buf.size() - data_off != payload) {
    throw FormatError("payload length mismatch: expected " + std::to_string(payload) +
                      " bytes after header, found " +
                      std::to_string(buf.size() - data_off));
  }

  size_t off = data_off;
  ep.leader.resize(static_cast<size_t>(ep.samples) * ep.channels());
  ep.follower.resize(ep.leader.size());
  std::memcpy(ep.leader.data(), buf.data() + off, stream_bytes);
  off += stream_bytes;
  std::memcpy(ep.follower.data(), buf.data() + off, stream_bytes);
  off += stream_bytes;
  for (auto& c : store->cameras) {
    std::memcpy(c.pixels.data(), buf.data() + off, c.pixels.size());
    off += c.pixels.size();
  }
  ep.camera = store;
  ep.validate();
  return ep;
}

// ---------------------------------------------------------------------------
// DABI

int DabiConfig::factor() const { return source_rate / target_rate; }

void DabiConfig::validate() const {
  if (source_rate <= 0 || target_rate <= 0 || source_rate % target_rate != 0) {
    throw std::invalid_argument(
        "DabiConfig: source_rate must be a positive multiple of target_rate");
  }
}

std::vector<Episode> dabi_augment(const Episode& episode, const DabiConfig& cfg) {
  cfg.validate();
  if (episode.control_rate != cfg.source_rate) {
    throw std::invalid_argument("dabi_augment: episode rate != cfg.source_rate");
  }
  const int factor = cfg.factor();
  if (episode.samples % factor != 0) {
    throw std::invalid_argument("dabi_augment: sample count not divisible by factor");
  }
  std::vector<Episode> out;
  out.reserve(factor);
  const int64_t t_out = episode.samples / factor;
  const size_t row = episode.channels();
  for (int o = 0; o < factor; ++o) {
    Episode ep = episode;  // shares the frame store
    ep.control_rate = cfg.target_rate;
    ep.samples = t_out;
    ep.leader.resize(static_cast<size_t>(t_out) * row);
    ep.follower.resize(ep.leader.size());
    for (int64_t i = 0; i < t_out; ++i) {
      const int64_t src = o + static_cast<int64_t>(factor) * i;
      std::memcpy(ep.leader.data() + i * row, episode.leader.data() + src * row,
                  row * sizeof(float));
      std::memcpy(ep.follower.data() + i * row, episode.follower.data() + src * row,
                  row * sizeof(float));
    }
    ep.annotations["dabi_offset"] = o;
    ep.annotations["dabi_factor"] = factor;
    out.push_back(std::move(ep));
  }
  return out;
}

// ---------------------------------------------------------------------------
// manifests

void write_manifest(const std::filesystem::path& manifest,
                    const std::vector<std::filesystem::path>& episodes) {
  std::ofstream out(manifest, std::ios::trunc);
  if (!out) throw FormatError("cannot open for write: " + manifest.string());
  for (const auto& p : episodes) out << p.generic_string() << "\n";
}

std::vector<std::filesystem::path> read_manifest(const std::filesystem::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw FormatError("cannot open manifest: " + manifest.string());
  std::vector<std::filesystem::path> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::filesystem::path p(line);
    if (p.is_relative()) p = manifest.parent_path() / p;
    out.push_back(p);
  }
  return out;
}

std::vector<std::filesystem::path> list_episodes(const std::filesystem::path& source) {
  namespace fs = std::filesystem;
  if (fs::is_directory(source)) {
    const fs::path manifest = source / "manifest.txt";
    if (fs::exists(manifest)) return read_manifest(manifest);
    std::vector<fs::path> out;
    for (const auto& e : fs::directory_iterator(source)) {
      if (e.path().extension() == ".blat") out.push_back(e.path());
    }
    std::sort(out.begin(), out.end());
    return out;
  }
  if (source.extension() == ".blat") return {source};
  return read_manifest(source);
}

}  // namespace bilat
