#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "dst/config.hpp"
#include "dst/metrics.hpp"

namespace dst {

// Binary containers are little-endian throughout; layouts are documented in
// docs/formats.md.
inline constexpr std::uint32_t kFormatVersion = 1;

namespace io {

template <class T>
T swap_bytes(T v) {
  auto b = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
  std::reverse(b.begin(), b.end());
  return std::bit_cast<T>(b);
}

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  void magic(const char (&m)[5]) { bytes(m, 4); }
  template <class T>
  void scalar(T v) {
    static_assert(std::is_arithmetic_v<T>);
    if constexpr (std::endian::native == std::endian::big) v = swap_bytes(v);
    bytes(&v, sizeof v);
  }
  void u32(std::uint32_t v) { scalar(v); }
  void u64(std::uint64_t v) { scalar(v); }
  void i32(std::int32_t v) { scalar(v); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void string(const std::string& s) {
    u64(s.size());
    bytes(s.data(), s.size());
  }
  void tensor(const Tensor& t) {
    u32(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) u64(d);
    // The element count separates an empty tensor from a rank-0 scalar.
    u64(t.size());
    for (double v : t.data()) f64(v);
  }
  const std::string& data() const { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  Reader(std::string data, std::string what) : buf_(std::move(data)), what_(std::move(what)) {}

  void bytes(void* p, std::size_t n) {
    if (n > buf_.size() - pos_) throw IoError(what_ + ": truncated at byte " + std::to_string(pos_));
    std::memcpy(p, buf_.data() + pos_, n);
    pos_ += n;
  }
  void expect_magic(const char (&m)[5]) {
    char got[4];
    bytes(got, 4);
    if (std::memcmp(got, m, 4) != 0) throw IoError(what_ + ": bad magic, expected " + std::string(m, 4));
  }
  template <class T>
  T scalar() {
    T v;
    bytes(&v, sizeof v);
    if constexpr (std::endian::native == std::endian::big) v = swap_bytes(v);
    return v;
  }
  std::uint32_t u32() { return scalar<std::uint32_t>(); }
  std::uint64_t u64() { return scalar<std::uint64_t>(); }
  std::int32_t i32() { return scalar<std::int32_t>(); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string string() {
    const std::uint64_t n = u64();
    if (n > buf_.size() - pos_) throw IoError(what_ + ": string length exceeds the file");
    std::string s(buf_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  Tensor tensor() {
    const std::uint32_t rank = u32();
    if (rank > 8) throw IoError(what_ + ": implausible tensor rank " + std::to_string(rank));
    Shape shape(rank);
    std::size_t count = 1;
    for (auto& d : shape) {
      d = u64();
      if (d != 0 && count > (buf_.size() - pos_) / 8 / d) throw IoError(what_ + ": tensor larger than the file");
      count *= d;
    }
    const std::uint64_t stored = u64();
    if (rank == 0 && stored == 0) return Tensor();
    if (stored != count) throw IoError(what_ + ": tensor element count does not match its shape");
    std::vector<double> data(count);
    for (double& v : data) v = f64();
    return Tensor(std::move(shape), std::move(data));
  }
  void expect_version() {
    const std::uint32_t v = u32();
    if (v != kFormatVersion) throw IoError(what_ + ": unsupported format version " + std::to_string(v));
  }
  bool at_end() const { return pos_ == buf_.size(); }
  void expect_end() const {
    if (!at_end()) throw IoError(what_ + ": trailing bytes");
  }

 private:
  std::string buf_;
  std::size_t pos_ = 0;
  std::string what_;
};

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("failed reading '" + path + "'");
  return ss.str();
}

inline void write_file(const std::string& path, const std::string& data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot create '" + path + "'");
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out) throw IoError("failed writing '" + path + "'");
}

inline std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

}  // namespace io

// --- tensor ------------------------------------------------------------------

inline std::string serialize_tensor(const Tensor& t) {
  io::Writer w;
  w.magic("DSTT");
  w.u32(kFormatVersion);
  w.tensor(t);
  return w.data();
}

inline Tensor deserialize_tensor(std::string bytes) {
  io::Reader r(std::move(bytes), "tensor");
  r.expect_magic("DSTT");
  r.expect_version();
  Tensor t = r.tensor();
  r.expect_end();
  return t;
}

// --- checkpoint ----------------------------------------------------------------

struct Checkpoint {
  EmbeddingStack stack;
  std::size_t iterations_done = 0;
  std::uint64_t seed = 0;
};

inline std::string serialize_checkpoint(const Checkpoint& ck) {
  io::Writer w;
  w.magic("DSTC");
  w.u32(kFormatVersion);
  const Json header = {{"model", to_json(ck.stack.config)}, {"iterations_done", ck.iterations_done}, {"seed", ck.seed}};
  w.string(header.dump());
  const auto params = ck.stack.parameters();
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const Parameter* p : params) {
    w.string(p->name);
    w.tensor(p->value);
    w.tensor(p->m);
    w.tensor(p->v);
    w.u64(p->steps);
  }
  return w.data();
}

inline Checkpoint deserialize_checkpoint(std::string bytes) {
  io::Reader r(std::move(bytes), "checkpoint");
  r.expect_magic("DSTC");
  r.expect_version();
  Json header;
  try {
    header = Json::parse(r.string());
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("checkpoint: malformed header: ") + e.what());
  }
  Checkpoint ck;
  try {
    ck.stack = EmbeddingStack::initialize(model_from_json(header.at("model")), 0);
    ck.iterations_done = header.at("iterations_done").get<std::size_t>();
    ck.seed = header.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("checkpoint: malformed header: ") + e.what());
  }
  auto params = ck.stack.parameters();
  if (r.u32() != params.size()) throw IoError("checkpoint: parameter count mismatch");
  for (Parameter* p : params) {
    const std::string name = r.string();
    if (name != p->name) throw IoError("checkpoint: expected parameter '" + p->name + "', found '" + name + "'");
    Tensor value = r.tensor(), m = r.tensor(), v = r.tensor();
    if (value.shape() != p->value.shape() || m.shape() != p->value.shape() || v.shape() != p->value.shape())
      throw IoError("checkpoint: parameter '" + name + "' has shape " + shape_str(value.shape()) + ", expected " +
                    shape_str(p->value.shape()));
    p->value = std::move(value);
    p->m = std::move(m);
    p->v = std::move(v);
    p->grad = Tensor(p->value.shape());
    p->steps = r.u64();
  }
  r.expect_end();
  return ck;
}

// --- videos ------------------------------------------------------------------

/// A video file holds one or more videos generated from one scenario config.
inline std::string serialize_videos(const std::vector<Video>& videos) {
  io::Writer w;
  w.magic("DSTV");
  w.u32(kFormatVersion);
  w.u32(static_cast<std::uint32_t>(videos.size()));
  for (const Video& v : videos) {
    w.string(Json{{"config", to_json(v.config)}, {"seed", v.config.seed}, {"version", kFormatVersion}}.dump());
    w.u32(static_cast<std::uint32_t>(v.frames.size()));
    for (const auto& frame : v.frames) {
      w.u32(static_cast<std::uint32_t>(frame.size()));
      for (const auto& d : frame) {
        w.i32(d.frame);
        w.i32(d.identity);
        w.u32(d.visible ? 1u : 0u);
        w.f64(d.box.u);
        w.f64(d.box.v);
        w.f64(d.box.w);
        w.f64(d.box.h);
        w.tensor(d.appearance);
        w.tensor(d.mask.grid);
      }
    }
  }
  return w.data();
}

inline std::vector<Video> deserialize_videos(std::string bytes) {
  io::Reader r(std::move(bytes), "video");
  r.expect_magic("DSTV");
  r.expect_version();
  const std::uint32_t count = r.u32();
  std::vector<Video> videos;
  for (std::uint32_t k = 0; k < count; ++k) {
    Video v;
    try {
      v.config = scenario_from_json(Json::parse(r.string()).at("config"));
    } catch (const nlohmann::json::exception& e) {
      throw IoError(std::string("video: malformed header: ") + e.what());
    }
    v.frames.resize(r.u32());
    for (auto& frame : v.frames) {
      frame.resize(r.u32());
      for (auto& d : frame) {
        d.frame = r.i32();
        d.identity = r.i32();
        d.visible = r.u32() != 0;
        d.box = {r.f64(), r.f64(), r.f64(), r.f64()};
        d.appearance = r.tensor();
        d.mask.grid = r.tensor();
      }
    }
    videos.push_back(std::move(v));
  }
  r.expect_end();
  return videos;
}

/// Human-readable companion of a video file: config echo and boxes, no tensors.
inline Json video_manifest(const std::vector<Video>& videos) {
  Json list = Json::array();
  for (const Video& v : videos) {
    Json frames = Json::array();
    for (const auto& frame : v.frames) {
      Json dets = Json::array();
      for (const auto& d : frame)
        dets.push_back({{"identity", d.identity},
                        {"visible", d.visible},
                        {"box", {d.box.u, d.box.v, d.box.w, d.box.h}}});
      frames.push_back(std::move(dets));
    }
    list.push_back({{"config", to_json(v.config)}, {"seed", v.config.seed}, {"frames", std::move(frames)}});
  }
  return {{"format", "dst-video-manifest"}, {"version", kFormatVersion}, {"videos", std::move(list)}};
}

// --- track output ---------------------------------------------------------------

/// MOTChallenge-style text: `frame,id,u,v,w,h,score`, frame and id 1-based.
inline std::string to_mot_text(const TrackOutput& out) {
  std::string s;
  char line[160];
  for (const auto& r : out.records) {
    std::snprintf(line, sizeof line, "%d,%d,%.2f,%.2f,%.2f,%.2f,%.6f\n", r.frame + 1, r.id + 1, r.box.u, r.box.v,
                  r.box.w, r.box.h, r.score);
    s += line;
  }
  return s;
}

inline TrackOutput from_mot_text(const std::string& text) {
  TrackOutput out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    TrackRecord r;
    int frame = 0, id = 0;
    char tail = 0;
    if (std::sscanf(line.c_str(), "%d,%d,%lf,%lf,%lf,%lf,%lf%c", &frame, &id, &r.box.u, &r.box.v, &r.box.w, &r.box.h,
                    &r.score, &tail) != 7 ||
        frame < 1 || id < 1)
      throw DataError("track file line " + std::to_string(lineno) + ": expected frame,id,u,v,w,h,score");
    r.frame = frame - 1;
    r.id = id - 1;
    out.records.push_back(r);
  }
  return out;
}

inline Json to_track_json(const TrackOutput& out) {
  std::map<int, Json> tracks;
  for (const auto& r : out.records) {
    auto& t = tracks[r.id];
    if (t.is_null()) t = {{"id", r.id + 1}, {"frames", Json::array()}, {"boxes", Json::array()}, {"scores", Json::array()}};
    t["frames"].push_back(r.frame + 1);
    t["boxes"].push_back({std::stod(io::fmt("%.2f", r.box.u)), std::stod(io::fmt("%.2f", r.box.v)),
                          std::stod(io::fmt("%.2f", r.box.w)), std::stod(io::fmt("%.2f", r.box.h))});
    t["scores"].push_back(r.score);
  }
  Json list = Json::array();
  for (auto& [id, t] : tracks) list.push_back(std::move(t));
  return {{"format", "dst-tracks"}, {"version", kFormatVersion}, {"tracks", std::move(list)}};
}

// --- evaluation and training logs --------------------------------------------------

inline Json to_json(const EvalReport& r) {
  return {{"format", "dst-eval"},
          {"version", kFormatVersion},
          {"scenario", r.scenario},
          {"association_accuracy", r.association_accuracy},
          {"no_pairs", r.no_pairs},
          {"pairs", r.pairs},
          {"id_switches", r.id_switches},
          {"idf1", r.idf1},
          {"predicted_tracks", r.predicted_tracks},
          {"gt_identities", r.gt_identities}};
}

inline std::string loss_csv(const std::vector<LossRecord>& trace, bool header = true) {
  std::string s = header ? "iteration,l_clip,l_det_traj,l_asso\n" : "";
  char line[160];
  for (const auto& r : trace) {
    std::snprintf(line, sizeof line, "%zu,%.9g,%.9g,%.9g\n", r.iteration, r.l_clip, r.l_det_traj, r.l_asso);
    s += line;
  }
  return s;
}

}  // namespace dst
