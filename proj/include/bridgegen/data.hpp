#pragma once

// Paired pre/post datasets: two synthetic generators, a binary container
// (BBDS1: magic, u64 manifest length, JSON manifest, then one BBT1 blob per
// manifest entry), image-directory ingestion and deterministic epoch
// batching.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "bridgegen/conditioning.hpp"
#include "bridgegen/image.hpp"
#include "bridgegen/rng.hpp"
#include "bridgegen/tensor.hpp"

namespace bridgegen {

struct PairedSample {
  Tensor pre;   // known state, the reverse chain's anchor
  Tensor post;  // generation target
  ConditionPayload cond;
};

// ---- synthetic generators ----

// 2-D points: pre ~ N(0, I); the event shifts x by +2 (label 1) or -2
// (label 0) plus N(0, 0.1^2) jitter.
inline std::vector<PairedSample> make_pointcloud_dataset(std::size_t n, RngState& rng) {
  if (n == 0) throw ValueError("make_pointcloud_dataset: n must be positive");
  std::vector<PairedSample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    PairedSample s;
    s.pre = sample_standard_normal(rng, {2});
    int label = static_cast<int>(next_u64(rng) & 1u);
    double shift = label == 1 ? 2.0 : -2.0;
    s.post = Tensor::zeros({2});
    s.post.data[0] = s.pre.data[0] + shift + 0.1 * next_normal(rng);
    s.post.data[1] = s.pre.data[1] + 0.1 * next_normal(rng);
    s.cond = ConditionPayload::make_label(label);
    out.push_back(std::move(s));
  }
  return out;
}

// Gray scenes: a two-tone checkerboard (4 px cells at 0.2 / 0.45) with pixel
// noise; the event paints a random axis-aligned rectangle covering 10-40%
// of the image to 0.9 (before fresh pixel noise). The rectangle is the
// layout mask.
inline std::vector<PairedSample> make_scene_dataset(std::size_t n, std::size_t h, std::size_t w,
                                                    RngState& rng, double noise = 0.05) {
  if (n == 0) throw ValueError("make_scene_dataset: n must be positive");
  if (h < 8 || w < 8) throw ValueError("make_scene_dataset: scene must be at least 8x8");
  if (noise < 0.0) throw ValueError("make_scene_dataset: noise must be >= 0");
  std::vector<PairedSample> out;
  out.reserve(n);
  auto clamp01 = [](double v) { return std::min(1.0, std::max(0.0, v)); };
  for (std::size_t i = 0; i < n; ++i) {
    PairedSample s;
    std::size_t phase = static_cast<std::size_t>(next_u64(rng) & 1u);
    s.pre = Tensor::zeros({h, w});
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        bool dark = ((y / 4 + x / 4 + phase) % 2) == 0;
        s.pre.data[y * w + x] = clamp01((dark ? 0.2 : 0.45) + noise * next_normal(rng));
      }
    // Rectangle with area fraction in [0.10, 0.40].
    std::size_t rw = 0, rh = 0;
    for (;;) {
      rw = 2 + next_u64(rng) % (w - 2);
      rh = 2 + next_u64(rng) % (h - 2);
      double frac = static_cast<double>(rw * rh) / static_cast<double>(w * h);
      if (frac >= 0.10 && frac <= 0.40) break;
    }
    std::size_t x0 = next_u64(rng) % (w - rw + 1);
    std::size_t y0 = next_u64(rng) % (h - rh + 1);
    Tensor mask = Tensor::zeros({h, w});
    for (std::size_t y = y0; y < y0 + rh; ++y)
      for (std::size_t x = x0; x < x0 + rw; ++x) mask.data[y * w + x] = 1.0;
    s.post = Tensor::zeros({h, w});
    for (std::size_t p = 0; p < h * w; ++p) {
      double base = mask.data[p] == 1.0 ? 0.9 : s.pre.data[p];
      s.post.data[p] = clamp01(base + noise * next_normal(rng));
    }
    s.cond = ConditionPayload::make_layout(std::move(mask));
    out.push_back(std::move(s));
  }
  return out;
}

// ---- container ----

inline void write_dataset(const std::string& path, const std::vector<PairedSample>& samples) {
  if (samples.empty()) throw ValueError("write_dataset: dataset must be non-empty");
  nlohmann::json records = nlohmann::json::array();
  std::string blobs;
  for (const auto& s : samples) {
    nlohmann::json r;
    r["kind"] = cond_kind_name(s.cond.kind);
    if (s.cond.kind == CondKind::label) r["label"] = s.cond.label;
    if (s.cond.kind == CondKind::layout || s.cond.kind == CondKind::semantic)
      r["num_classes"] = s.cond.num_classes;
    r["has_map"] = s.cond.kind == CondKind::layout || s.cond.kind == CondKind::semantic;
    records.push_back(std::move(r));
    blobs += tensor_to_bytes(s.pre);
    blobs += tensor_to_bytes(s.post);
    if (s.cond.kind == CondKind::layout || s.cond.kind == CondKind::semantic)
      blobs += tensor_to_bytes(s.cond.map);
  }
  nlohmann::json manifest;
  manifest["format"] = "BBDS1";
  manifest["version"] = 1;
  manifest["count"] = samples.size();
  manifest["records"] = std::move(records);
  std::string mtext = manifest.dump();

  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path);
  detail::write_bytes(os, "BBDS1", 5);
  detail::write_u64(os, mtext.size());
  detail::write_bytes(os, mtext.data(), mtext.size());
  detail::write_bytes(os, blobs.data(), blobs.size());
  os.flush();
  if (!os) throw IoError("write failed: " + path);
}

inline std::vector<PairedSample> read_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + path);
  char magic[5];
  detail::read_bytes(is, magic, 5);
  if (std::memcmp(magic, "BBDS1", 5) != 0) throw IoError("bad dataset magic in " + path);
  std::uint64_t mlen = detail::read_u64(is);
  if (mlen == 0 || mlen > (1ull << 30)) throw IoError("bad manifest length in " + path);
  std::string mtext(mlen, '\0');
  detail::read_bytes(is, mtext.data(), mlen);
  nlohmann::json manifest = nlohmann::json::parse(mtext, nullptr, false);
  if (manifest.is_discarded()) throw IoError("bad manifest JSON in " + path);
  if (manifest.value("format", "") != "BBDS1" || manifest.value("version", 0) != 1)
    throw IoError("unsupported dataset format in " + path);
  std::size_t count = manifest.value("count", std::size_t{0});
  const auto& records = manifest.at("records");
  if (!records.is_array() || records.size() != count || count == 0)
    throw IoError("inconsistent dataset manifest in " + path);

  std::vector<PairedSample> out;
  out.reserve(count);
  for (const auto& r : records) {
    PairedSample s;
    s.pre = read_tensor(is);
    s.post = read_tensor(is);
    CondKind kind = cond_kind_from_name(r.value("kind", ""));
    try {
      switch (kind) {
        case CondKind::label:
          s.cond = ConditionPayload::make_label(r.value("label", -1));
          break;
        case CondKind::layout:
          s.cond = ConditionPayload::make_layout(read_tensor(is));
          break;
        case CondKind::semantic:
          s.cond = ConditionPayload::make_semantic(read_tensor(is), r.value("num_classes", 0));
          break;
        case CondKind::none:
          s.cond = ConditionPayload::make_none();
          break;
      }
    } catch (const ValueError& e) {
      throw IoError("invalid condition record in " + path + ": " + e.what());
    }
    out.push_back(std::move(s));
  }
  return out;
}

// ---- image-directory ingestion ----

// Pairs files by identical name across pre/post directories; an optional
// condition directory supplies per-pair layout masks or semantic maps of the
// same name. Gray pairs load as [H,W], color as [3,H,W].
inline std::vector<PairedSample> ingest_image_pairs(const std::string& pre_dir,
                                                    const std::string& post_dir,
                                                    const std::string& cond_dir = "",
                                                    CondKind cond_kind = CondKind::none,
                                                    int num_classes = 2) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(pre_dir)) throw IoError("not a directory: " + pre_dir);
  if (!fs::is_directory(post_dir)) throw IoError("not a directory: " + post_dir);
  if (cond_kind != CondKind::none && cond_kind != CondKind::layout &&
      cond_kind != CondKind::semantic)
    throw ValueError("ingest_image_pairs: condition directories carry layout or semantic maps");
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(pre_dir)) {
    if (!e.is_regular_file()) continue;
    std::string ext = e.path().extension().string();
    if (ext == ".pgm" || ext == ".ppm") names.push_back(e.path().filename().string());
  }
  std::sort(names.begin(), names.end());
  if (names.empty()) throw IoError("no .pgm/.ppm files in " + pre_dir);

  std::vector<PairedSample> out;
  out.reserve(names.size());
  for (const auto& name : names) {
    fs::path pre_path = fs::path(pre_dir) / name;
    fs::path post_path = fs::path(post_dir) / name;
    if (!fs::exists(post_path)) throw IoError("missing post image: " + post_path.string());
    bool color = pre_path.extension() == ".ppm";
    PairedSample s;
    s.pre = color ? read_ppm(pre_path.string()) : read_pgm(pre_path.string());
    s.post = color ? read_ppm(post_path.string()) : read_pgm(post_path.string());
    if (!s.pre.same_shape(s.post))
      throw IoError("pre/post geometry mismatch for " + name);
    if (cond_kind != CondKind::none) {
      fs::path cond_path = fs::path(cond_dir) / fs::path(name).replace_extension(".pgm");
      if (!fs::exists(cond_path)) throw IoError("missing condition map: " + cond_path.string());
      Tensor map = read_pgm_labels(cond_path.string());
      try {
        s.cond = cond_kind == CondKind::layout
                     ? ConditionPayload::make_layout(std::move(map))
                     : ConditionPayload::make_semantic(std::move(map), num_classes);
      } catch (const ValueError& e) {
        throw IoError("invalid condition map " + cond_path.string() + ": " + e.what());
      }
    }
    out.push_back(std::move(s));
  }
  return out;
}

// ---- deterministic batching ----

// Shuffled index order for one epoch, a pure function of (seed, epoch):
// resuming a run can rebuild any epoch's order without replaying history.
inline std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed,
                                            std::uint64_t epoch) {
  if (n == 0) throw ValueError("epoch_order: n must be positive");
  RngState rng{detail::mix64(seed + epoch * detail::kGolden), 0};
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  for (std::size_t i = n - 1; i > 0; --i) {
    std::size_t j = static_cast<std::size_t>(next_u64(rng) % (i + 1));
    std::swap(order[i], order[j]);
  }
  return order;
}

// Indices of global minibatch `step` (0-based), dropping each epoch's
// partial tail batch.
inline std::vector<std::size_t> batch_indices(std::size_t n, std::size_t batch,
                                              std::uint64_t seed, std::uint64_t step) {
  if (batch == 0 || batch > n)
    throw ValueError("batch_indices: batch size must be in [1, dataset size]");
  std::size_t per_epoch = n / batch;
  std::uint64_t epoch = step / per_epoch;
  std::size_t slot = static_cast<std::size_t>(step % per_epoch);
  std::vector<std::size_t> order = epoch_order(n, seed, epoch);
  return std::vector<std::size_t>(order.begin() + static_cast<std::ptrdiff_t>(slot * batch),
                                  order.begin() + static_cast<std::ptrdiff_t>((slot + 1) * batch));
}

}  // namespace bridgegen
