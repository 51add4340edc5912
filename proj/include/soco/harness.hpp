#pragma once

#include <json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "soco/config.hpp"
#include "soco/errors.hpp"
#include "soco/image_io.hpp"
#include "soco/proposals.hpp"
#include "soco/rng.hpp"
#include "soco/selective_search.hpp"
#include "soco/synth.hpp"
#include "soco/train.hpp"

namespace soco {

namespace detail {
inline constexpr uint64_t kStreamData = 201;

inline std::string image_name(int64_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "img_%05lld", static_cast<long long>(i));
  return std::string(buf);
}
}  // namespace detail

// ---------------------------------------------------------------------------
// Dataset generation
// ---------------------------------------------------------------------------

// Renders n_images synthetic scenes into data_dir as PPM files plus a
// manifest.json with the ground-truth boxes. Byte-identical for a fixed seed.
inline void gen_data(const RunConfig& cfg) {
  check_input(cfg.n_images >= 1, "gen_data: need at least one image");
  std::filesystem::create_directories(cfg.data_dir);
  nlohmann::json manifest;
  manifest["images"] = nlohmann::json::array();
  for (int64_t i = 0; i < cfg.n_images; ++i) {
    Rng rng(derive_seed(cfg.seed, {detail::kStreamData, static_cast<uint64_t>(i)}));
    Scene scene = render_scene(cfg.scene, rng);
    std::string name = detail::image_name(i);
    write_ppm(cfg.data_dir + "/" + name + ".ppm", scene.image);
    nlohmann::json entry;
    entry["id"] = name;
    entry["file"] = name + ".ppm";
    entry["width"] = cfg.scene.image_size;
    entry["height"] = cfg.scene.image_size;
    entry["shapes"] = nlohmann::json::array();
    for (const PlacedShape& sh : scene.shapes)
      entry["shapes"].push_back(
          {{"kind", sh.kind}, {"bbox", {sh.bbox.x, sh.bbox.y, sh.bbox.w, sh.bbox.h}}});
    manifest["images"].push_back(std::move(entry));
  }
  std::ofstream f(cfg.data_dir + "/manifest.json");
  if (!f) throw FormatError("gen_data: cannot write manifest in " + cfg.data_dir);
  f << manifest.dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// Proposal cache (JSON lines)
// ---------------------------------------------------------------------------

struct CacheRecord {
  std::string image_id;
  int64_t width = 0;
  int64_t height = 0;
  std::vector<BBox> boxes;  // center format, original-image coordinates
};

inline void write_proposal_cache(const std::string& path, const std::vector<CacheRecord>& records) {
  std::ofstream f(path);
  if (!f) throw FormatError("write_proposal_cache: cannot open " + path);
  for (const CacheRecord& r : records) {
    nlohmann::json line;
    line["image_id"] = r.image_id;
    line["width"] = r.width;
    line["height"] = r.height;
    line["boxes"] = nlohmann::json::array();
    for (const BBox& b : r.boxes) line["boxes"].push_back({b.x, b.y, b.w, b.h});
    f << line.dump() << "\n";
  }
}

inline std::vector<CacheRecord> read_proposal_cache(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw FormatError("read_proposal_cache: cannot open " + path);
  std::vector<CacheRecord> out;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) throw FormatError("read_proposal_cache: bad JSON line in " + path);
    CacheRecord r;
    r.image_id = j.at("image_id").get<std::string>();
    r.width = j.at("width").get<int64_t>();
    r.height = j.at("height").get<int64_t>();
    for (const auto& b : j.at("boxes"))
      r.boxes.push_back(BBox{b.at(0).get<double>(), b.at(1).get<double>(), b.at(2).get<double>(),
                             b.at(3).get<double>()});
    out.push_back(std::move(r));
  }
  return out;
}

inline std::vector<std::string> list_ppm_files(const std::string& dir) {
  std::vector<std::string> files;
  if (!std::filesystem::is_directory(dir)) return files;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".ppm") files.push_back(e.path().string());
  std::sort(files.begin(), files.end());
  return files;
}

// Runs selective search plus the aspect/scale filter over every image in
// data_dir and writes the cache, sorted by image_id. Returns the number of
// images that failed to process (unreadable files get a warning).
inline int build_proposal_cache(const RunConfig& cfg, std::ostream& log = std::cout) {
  std::vector<std::string> files = list_ppm_files(cfg.data_dir);
  check_input(!files.empty(), "proposals: no .ppm images in " + cfg.data_dir);
  std::vector<CacheRecord> records;
  int failures = 0;
  for (const std::string& path : files) {
    try {
      Tensor img = read_ppm(path);
      std::vector<BBox> raw = selective_search(img, cfg.search);
      CacheRecord r;
      r.image_id = std::filesystem::path(path).stem().string();
      r.width = img_w(img);
      r.height = img_h(img);
      r.boxes = filter_proposals(raw, static_cast<double>(r.width), static_cast<double>(r.height));
      records.push_back(std::move(r));
    } catch (const std::exception& e) {
      log << "warning: skipping " << path << ": " << e.what() << "\n";
      failures++;
    }
  }
  std::sort(records.begin(), records.end(),
            [](const CacheRecord& a, const CacheRecord& b) { return a.image_id < b.image_id; });
  write_proposal_cache(cfg.proposal_cache, records);

  // Summary statistics: proposal count and relative-size histograms.
  int64_t total = 0;
  std::vector<int64_t> count_hist(6, 0);  // 0, 1-5, 6-10, 11-20, 21-50, >50
  std::vector<int64_t> size_hist(10, 0);  // sqrt(wh)/sqrt(WH) in 0.1 buckets
  for (const CacheRecord& r : records) {
    int64_t n = static_cast<int64_t>(r.boxes.size());
    total += n;
    size_t bucket = n == 0 ? 0 : n <= 5 ? 1 : n <= 10 ? 2 : n <= 20 ? 3 : n <= 50 ? 4 : 5;
    count_hist[bucket]++;
    double frame = std::sqrt(static_cast<double>(r.width * r.height));
    for (const BBox& b : r.boxes) {
      double rel = std::sqrt(b.w * b.h) / frame;
      size_t sb = std::min<size_t>(9, static_cast<size_t>(rel * 10.0));
      size_hist[sb]++;
    }
  }
  log << "proposal cache: " << records.size() << " images, " << total << " proposals ("
      << (records.empty() ? 0.0 : static_cast<double>(total) / static_cast<double>(records.size()))
      << " per image)\n";
  const char* count_labels[6] = {"0", "1-5", "6-10", "11-20", "21-50", ">50"};
  log << "proposals per image:";
  for (size_t i = 0; i < count_hist.size(); ++i)
    log << "  [" << count_labels[i] << "] " << count_hist[i];
  log << "\nrelative size sqrt(wh)/sqrt(WH):";
  for (size_t i = 0; i < size_hist.size(); ++i)
    if (size_hist[i] > 0)
      log << "  [" << static_cast<double>(i) / 10.0 << "-" << static_cast<double>(i + 1) / 10.0
          << ") " << size_hist[i];
  log << "\n";
  return failures;
}

// Joins images with their cached proposals for training.
inline std::vector<TrainImage> load_dataset(const RunConfig& cfg) {
  std::vector<CacheRecord> cache = read_proposal_cache(cfg.proposal_cache);
  std::vector<TrainImage> out;
  for (const CacheRecord& r : cache) {
    TrainImage im;
    im.id = r.image_id;
    im.image = read_ppm(cfg.data_dir + "/" + r.image_id + ".ppm");
    im.proposals = r.boxes;
    out.push_back(std::move(im));
  }
  check_input(!out.empty(), "load_dataset: proposal cache is empty");
  return out;
}

}  // namespace soco
