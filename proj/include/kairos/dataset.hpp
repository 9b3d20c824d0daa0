#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "kairos/image.hpp"

// Directory-tree ingestion for MVTec-AD / ViSA style datasets.
//
//   mvtec  <root>/<category>/train/good/*
//          <root>/<category>/test/<good|defect>/*
//   visa   <root>/split_csv/1cls.csv (object,split,label,image,...) when
//          present; otherwise <root>/<category>/Data/Images/{Normal,Anomaly}/*
//   flat   <root>/<category>/<good|defect>/*
//
// Label 0 means the file came from a `good` (or ViSA `Normal`) directory.
// Only .png/.jpg/.jpeg files are picked up.
namespace kairos::dataset {

enum class Layout { kMvtec, kVisa, kFlat };

Layout layout_from_string(const std::string& s);
std::string to_string(Layout layout);

enum class Split { kUnassigned, kTrain, kEval };
std::string to_string(Split split);

struct SampleRef {
  std::string id;        // category-relative POSIX path
  std::string category;
  std::filesystem::path path;
  std::uint8_t label = 0;
  std::string source_split;  // split named by the dataset layout ("train"/"test")
  Split split = Split::kUnassigned;

  friend bool operator==(const SampleRef&, const SampleRef&) = default;
};

struct ImageSample {
  SampleRef ref;
  Image image;
};

struct ClassCounts {
  std::size_t normal = 0;
  std::size_t anomalous = 0;
  friend bool operator==(const ClassCounts&, const ClassCounts&) = default;
};

struct DatasetManifest {
  std::filesystem::path root;
  Layout layout = Layout::kMvtec;
  // Categories in lexicographic order, samples ordered by id within each.
  std::map<std::string, std::vector<SampleRef>> categories;
  std::vector<std::string> warnings;

  std::vector<SampleRef> samples() const;
  std::size_t size() const;
  ClassCounts counts() const;
  // Counts per split tag ("train"/"eval"/"unassigned").
  std::map<std::string, ClassCounts> split_counts() const;

  friend bool operator==(const DatasetManifest&, const DatasetManifest&) = default;
};

// Throws IoError when root does not exist. Categories without images are
// dropped and reported in `warnings`.
DatasetManifest scan_dataset(const std::filesystem::path& root, Layout layout);

// Per (category, label) cell: seeded Fisher–Yates over the cell in id order,
// the first floor(train_fraction · n) go to train and the rest to eval.
DatasetManifest stratified_split(const DatasetManifest& manifest, double train_fraction,
                                 std::uint64_t seed);

ImageSample load_sample(const SampleRef& ref);

std::string manifest_to_json(const DatasetManifest& manifest);

}  // namespace kairos::dataset
