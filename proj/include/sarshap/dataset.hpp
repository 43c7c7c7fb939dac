#pragma once

// On-disk dataset layout:
//
//   <root>/manifest.json
//   <root>/<class>/<id>.pgm         (or <id>.f32 + <id>.json sidecar)
//   <root>/<class>/<id>.labels.pgm
//
// The manifest is optional when reading; without it classes are the
// sub-directories in lexicographic order.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "sarshap/error.hpp"
#include "sarshap/imaging.hpp"

namespace sarshap {

struct Sample {
  std::string id;  // "<class>/<name>", unique within a dataset
  int class_index = 0;
  AmplitudeImage image;
  RegionLabelMap labels;
  std::optional<double> scr_db;
  std::uint64_t seed = 0;
};

struct Dataset {
  std::vector<std::string> class_names;
  std::vector<Sample> samples;

  int class_count() const noexcept { return static_cast<int>(class_names.size()); }
};

namespace detail {

inline std::string stem_of(const std::string& id) {
  const auto slash = id.rfind('/');
  return slash == std::string::npos ? id : id.substr(slash + 1);
}

}  // namespace detail

inline void write_dataset(const std::filesystem::path& root, const Dataset& dataset,
                          ImageFormat format = ImageFormat::pgm8, const nlohmann::json& extra = {}) {
  namespace fs = std::filesystem;
  fs::create_directories(root);
  nlohmann::json manifest;
  manifest["schema"] = 1;
  manifest["classes"] = dataset.class_names;
  manifest["format"] = format == ImageFormat::pgm8 ? "pgm8" : "rawf32";
  if (!extra.is_null()) manifest["generator"] = extra;
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& s : dataset.samples) {
    if (s.class_index < 0 || s.class_index >= dataset.class_count())
      throw InvalidArgument("sample " + s.id + " has an out-of-range class");
    const auto& cls = dataset.class_names[s.class_index];
    const auto dir = root / cls;
    fs::create_directories(dir);
    const auto stem = detail::stem_of(s.id);
    const std::string image_file = cls + "/" + stem + (format == ImageFormat::pgm8 ? ".pgm" : ".f32");
    const std::string label_file = cls + "/" + stem + ".labels.pgm";
    save_image(root / image_file, s.image, format);
    save_labels(root / label_file, s.labels);
    nlohmann::json e = {{"id", s.id}, {"class", cls}, {"image", image_file}, {"labels", label_file},
                        {"seed", s.seed}};
    if (s.scr_db) e["scr_db"] = *s.scr_db;
    entries.push_back(std::move(e));
  }
  manifest["samples"] = std::move(entries);
  std::ofstream out(root / "manifest.json", std::ios::trunc);
  if (!out) throw IoError("cannot write manifest in " + root.string());
  out << manifest.dump(2) << '\n';
}

inline Dataset read_dataset(const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) throw IoError("dataset root " + root.string() + " is not a directory");
  Dataset ds;
  const auto manifest_path = root / "manifest.json";

  auto load_pair = [&](const std::string& image_file, const std::string& label_file) {
    const auto format = image_file.ends_with(".f32") ? ImageFormat::rawf32 : ImageFormat::pgm8;
    auto image = load_image(root / image_file, format);
    auto labels = load_labels(root / label_file);
    if (!labels.matches(image)) throw IoError("label map " + label_file + " does not match " + image_file);
    return std::pair{std::move(image), std::move(labels)};
  };

  if (fs::exists(manifest_path)) {
    nlohmann::json manifest;
    try {
      std::ifstream in(manifest_path);
      manifest = nlohmann::json::parse(in);
      ds.class_names = manifest.at("classes").get<std::vector<std::string>>();
      for (const auto& e : manifest.at("samples")) {
        Sample s;
        s.id = e.at("id").get<std::string>();
        const auto cls = e.at("class").get<std::string>();
        const auto it = std::find(ds.class_names.begin(), ds.class_names.end(), cls);
        if (it == ds.class_names.end()) throw IoError("manifest sample " + s.id + " has unknown class " + cls);
        s.class_index = static_cast<int>(it - ds.class_names.begin());
        auto [image, labels] = load_pair(e.at("image").get<std::string>(), e.at("labels").get<std::string>());
        s.image = std::move(image);
        s.labels = std::move(labels);
        if (e.contains("scr_db")) s.scr_db = e["scr_db"].get<double>();
        if (e.contains("seed")) s.seed = e["seed"].get<std::uint64_t>();
        ds.samples.push_back(std::move(s));
      }
    } catch (const nlohmann::json::exception& ex) {
      throw IoError("malformed manifest " + manifest_path.string() + ": " + ex.what());
    }
  } else {
    for (const auto& entry : fs::directory_iterator(root))
      if (entry.is_directory()) ds.class_names.push_back(entry.path().filename().string());
    std::sort(ds.class_names.begin(), ds.class_names.end());
    for (int c = 0; c < ds.class_count(); ++c) {
      std::vector<std::string> stems;
      for (const auto& entry : fs::directory_iterator(root / ds.class_names[c])) {
        const auto name = entry.path().filename().string();
        if (name.ends_with(".labels.pgm")) continue;
        if (name.ends_with(".pgm") || name.ends_with(".f32")) stems.push_back(name);
      }
      std::sort(stems.begin(), stems.end());
      for (const auto& file : stems) {
        const auto stem = file.substr(0, file.size() - 4);
        Sample s;
        s.id = ds.class_names[c] + "/" + stem;
        s.class_index = c;
        auto [image, labels] = load_pair(ds.class_names[c] + "/" + file, ds.class_names[c] + "/" + stem + ".labels.pgm");
        s.image = std::move(image);
        s.labels = std::move(labels);
        ds.samples.push_back(std::move(s));
      }
    }
  }
  if (ds.samples.empty()) throw IoError("dataset " + root.string() + " contains no samples");
  return ds;
}

}  // namespace sarshap
