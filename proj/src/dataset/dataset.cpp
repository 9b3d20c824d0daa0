#include "kairos/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "kairos/error.hpp"
#include "kairos/rng.hpp"

namespace kairos::dataset {

namespace fs = std::filesystem;

namespace {

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

bool is_image(const fs::path& p) {
  const auto ext = lower(p.extension().string());
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

std::vector<fs::path> sorted_dirs(const fs::path& dir) {
  std::vector<fs::path> out;
  if (!fs::is_directory(dir)) return out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_directory()) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

// Image files anywhere below `dir`, in lexicographic path order.
std::vector<fs::path> image_files(const fs::path& dir) {
  std::vector<fs::path> out;
  if (!fs::is_directory(dir)) return out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file() && is_image(e.path())) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

SampleRef make_ref(const fs::path& category_dir, const fs::path& file,
                   std::uint8_t label, std::string source_split) {
  SampleRef ref;
  ref.category = category_dir.filename().string();
  ref.id = file.lexically_relative(category_dir).generic_string();
  ref.path = file;
  ref.label = label;
  ref.source_split = std::move(source_split);
  return ref;
}

void scan_mvtec_category(const fs::path& cat, std::vector<SampleRef>& out) {
  for (const auto& split_dir : sorted_dirs(cat)) {
    const auto split = split_dir.filename().string();
    if (split != "train" && split != "test") continue;
    for (const auto& class_dir : sorted_dirs(split_dir)) {
      const std::uint8_t label = class_dir.filename() == "good" ? 0 : 1;
      for (const auto& f : image_files(class_dir)) out.push_back(make_ref(cat, f, label, split));
    }
  }
}

void scan_flat_category(const fs::path& cat, std::vector<SampleRef>& out) {
  for (const auto& class_dir : sorted_dirs(cat)) {
    const std::uint8_t label = class_dir.filename() == "good" ? 0 : 1;
    for (const auto& f : image_files(class_dir)) out.push_back(make_ref(cat, f, label, ""));
  }
}

void scan_visa_category(const fs::path& cat, std::vector<SampleRef>& out) {
  const fs::path images = cat / "Data" / "Images";
  for (const auto& [dir, label] : {std::pair{"Normal", 0}, std::pair{"Anomaly", 1}}) {
    for (const auto& f : image_files(images / dir)) {
      out.push_back(make_ref(cat, f, static_cast<std::uint8_t>(label), ""));
    }
  }
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream is(line);
  while (std::getline(is, field, ',')) {
    if (!field.empty() && field.back() == '\r') field.pop_back();
    fields.push_back(field);
  }
  return fields;
}

void scan_visa_csv(const fs::path& root, const fs::path& csv,
                   std::map<std::string, std::vector<SampleRef>>& categories) {
  std::ifstream in(csv);
  if (!in) throw IoError("cannot read " + csv.string());
  std::string line;
  if (!std::getline(in, line)) return;
  const auto header = split_csv_line(line);
  auto column = [&](const std::string& name) {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw DataError(csv.string() + ": missing column \"" + name + "\"");
    return static_cast<std::size_t>(it - header.begin());
  };
  const auto c_object = column("object"), c_split = column("split"),
             c_label = column("label"), c_image = column("image");
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    const auto f = split_csv_line(line);
    if (f.size() <= std::max({c_object, c_split, c_label, c_image})) {
      throw DataError(csv.string() + ": short row \"" + line + "\"");
    }
    const fs::path cat = root / f[c_object];
    auto ref = make_ref(cat, root / f[c_image], f[c_label] == "normal" ? 0 : 1, f[c_split]);
    categories[ref.category].push_back(std::move(ref));
  }
}

}  // namespace

Layout layout_from_string(const std::string& s) {
  if (s == "mvtec") return Layout::kMvtec;
  if (s == "visa") return Layout::kVisa;
  if (s == "flat") return Layout::kFlat;
  throw ConfigError("unknown dataset layout \"" + s + "\" (expected mvtec|visa|flat)");
}

std::string to_string(Layout layout) {
  switch (layout) {
    case Layout::kMvtec: return "mvtec";
    case Layout::kVisa: return "visa";
    case Layout::kFlat: return "flat";
  }
  return "unknown";
}

std::string to_string(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kEval: return "eval";
    case Split::kUnassigned: return "unassigned";
  }
  return "unknown";
}

std::vector<SampleRef> DatasetManifest::samples() const {
  std::vector<SampleRef> out;
  for (const auto& [cat, refs] : categories) out.insert(out.end(), refs.begin(), refs.end());
  return out;
}

std::size_t DatasetManifest::size() const {
  std::size_t n = 0;
  for (const auto& [cat, refs] : categories) n += refs.size();
  return n;
}

ClassCounts DatasetManifest::counts() const {
  ClassCounts c;
  for (const auto& [cat, refs] : categories) {
    for (const auto& r : refs) (r.label ? c.anomalous : c.normal) += 1;
  }
  return c;
}

std::map<std::string, ClassCounts> DatasetManifest::split_counts() const {
  std::map<std::string, ClassCounts> out;
  for (const auto& [cat, refs] : categories) {
    for (const auto& r : refs) {
      auto& c = out[to_string(r.split)];
      (r.label ? c.anomalous : c.normal) += 1;
    }
  }
  return out;
}

DatasetManifest scan_dataset(const fs::path& root, Layout layout) {
  if (!fs::is_directory(root)) {
    throw IoError("dataset root \"" + root.string() + "\" does not exist");
  }
  DatasetManifest m;
  m.root = root;
  m.layout = layout;

  std::map<std::string, std::vector<SampleRef>> found;
  const fs::path visa_csv = root / "split_csv" / "1cls.csv";
  if (layout == Layout::kVisa && fs::is_regular_file(visa_csv)) {
    scan_visa_csv(root, visa_csv, found);
  } else {
    for (const auto& cat : sorted_dirs(root)) {
      if (layout == Layout::kVisa && cat.filename() == "split_csv") continue;
      auto& refs = found[cat.filename().string()];
      switch (layout) {
        case Layout::kMvtec: scan_mvtec_category(cat, refs); break;
        case Layout::kVisa: scan_visa_category(cat, refs); break;
        case Layout::kFlat: scan_flat_category(cat, refs); break;
      }
    }
  }

  for (auto& [cat, refs] : found) {
    if (refs.empty()) {
      m.warnings.push_back("category \"" + cat + "\" has no images");
      continue;
    }
    std::sort(refs.begin(), refs.end(),
              [](const SampleRef& a, const SampleRef& b) { return a.id < b.id; });
    m.categories.emplace(cat, std::move(refs));
  }
  if (m.categories.empty()) {
    m.warnings.push_back("no categories with images under \"" + root.string() + "\"");
  }
  return m;
}

DatasetManifest stratified_split(const DatasetManifest& manifest, double train_fraction,
                                 std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw ConfigError("train_fraction must lie in (0, 1)");
  }
  DatasetManifest out = manifest;
  Rng rng(seed);
  for (auto& [cat, refs] : out.categories) {
    for (std::uint8_t label : {std::uint8_t{0}, std::uint8_t{1}}) {
      std::vector<std::size_t> cell;
      for (std::size_t i = 0; i < refs.size(); ++i) {
        if (refs[i].label == label) cell.push_back(i);
      }
      const auto order = shuffled_indices(cell.size(), rng);
      const auto n_train = static_cast<std::size_t>(
          std::floor(train_fraction * static_cast<double>(cell.size())));
      for (std::size_t k = 0; k < order.size(); ++k) {
        refs[cell[order[k]]].split = k < n_train ? Split::kTrain : Split::kEval;
      }
    }
  }
  return out;
}

ImageSample load_sample(const SampleRef& ref) { return {ref, load_image(ref.path)}; }

std::string manifest_to_json(const DatasetManifest& m) {
  using nlohmann::json;
  json cats = json::object();
  for (const auto& [cat, refs] : m.categories) {
    json arr = json::array();
    for (const auto& r : refs) {
      arr.push_back({{"id", r.id},
                     {"label", r.label},
                     {"source_split", r.source_split},
                     {"split", to_string(r.split)}});
    }
    cats[cat] = std::move(arr);
  }
  json splits = json::object();
  for (const auto& [name, c] : m.split_counts()) {
    splits[name] = {{"normal", c.normal}, {"anomalous", c.anomalous}};
  }
  const json doc = {{"root", m.root.generic_string()},
                    {"layout", to_string(m.layout)},
                    {"categories", cats},
                    {"split_counts", splits},
                    {"warnings", m.warnings}};
  return doc.dump(2);
}

}  // namespace kairos::dataset
