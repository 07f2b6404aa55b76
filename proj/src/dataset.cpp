#include "endoclip/dataset.hpp"

#include "endoclip/classes.hpp"
#include "endoclip/errors.hpp"
#include "endoclip/objectives.hpp"

#include "json.hpp"

#include <array>
#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>

namespace endoclip {

using json = nlohmann::ordered_json;

std::filesystem::path DatasetManifest::resolve(const ManifestRecord& r) const {
  std::filesystem::path p(r.path);
  return p.is_absolute() ? p : base_dir / p;
}

std::vector<int> DatasetManifest::labels() const {
  std::vector<int> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(r.label);
  return out;
}

namespace {

std::string required_string(const json& obj, const char* key, std::size_t line) {
  auto it = obj.find(key);
  if (it == obj.end() || !it->is_string()) {
    throw DataError("manifest line " + std::to_string(line) + ": missing string field '" + key + "'");
  }
  return it->get<std::string>();
}

std::string optional_string(const json& obj, const char* key, std::size_t line) {
  auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) return {};
  if (!it->is_string()) {
    throw DataError("manifest line " + std::to_string(line) + ": field '" + key + "' is not a string");
  }
  return it->get<std::string>();
}

bool readable_image(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  char magic[2] = {};
  in.read(magic, 2);
  return in.gcount() == 2 && magic[0] == 'P' && (magic[1] == '5' || magic[1] == '6');
}

}  // namespace

DatasetManifest parse_manifest(std::istream& in, const std::filesystem::path& base_dir,
                               bool check_files) {
  DatasetManifest m;
  m.base_dir = base_dir;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    json obj;
    try {
      obj = json::parse(text);
    } catch (const json::parse_error& e) {
      throw DataError("manifest line " + std::to_string(line) + ": malformed JSON (" + e.what() + ")");
    }
    if (!obj.is_object()) {
      throw DataError("manifest line " + std::to_string(line) + ": expected a JSON object");
    }
    ManifestRecord r;
    r.path = required_string(obj, "path", line);
    r.classification = required_string(obj, "Classification", line);
    r.type = optional_string(obj, "Type", line);
    r.description = optional_string(obj, "Description", line);
    if (auto it = obj.find("DescriptionEN"); it != obj.end() && !it->is_null()) {
      r.description_en = optional_string(obj, "DescriptionEN", line);
    }
    try {
      r.label = class_index(r.classification);
    } catch (const LabelError& e) {
      throw DataError("manifest line " + std::to_string(line) + ": " + e.what());
    }
    if (check_files && !readable_image(m.resolve(r))) {
      throw DataError("manifest line " + std::to_string(line) + ": unreadable image '" +
                      m.resolve(r).string() + "'");
    }
    m.records.push_back(std::move(r));
  }
  if (m.records.empty()) std::clog << "warning: manifest has no records\n";
  return m;
}

DatasetManifest ingest_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest " + path.string());
  return parse_manifest(in, path.parent_path(), true);
}

std::string serialize_manifest(const DatasetManifest& manifest) {
  std::ostringstream os;
  for (const auto& r : manifest.records) {
    json obj;
    obj["path"] = r.path;
    obj["Classification"] = r.classification;
    obj["Type"] = r.type;
    obj["Description"] = r.description;
    if (r.description_en) obj["DescriptionEN"] = *r.description_en;
    os << obj.dump() << '\n';
  }
  return os.str();
}

void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write manifest " + path.string());
  out << serialize_manifest(manifest);
}

std::string record_prompt(const ManifestRecord& record) {
  return build_prompt(record.classification, record.description_en);
}

// ---------------------------------------------------------------------------

namespace {

constexpr std::array<const char*, kNumClasses> kSyntheticDescriptions = {
    "bright round mucosa on the right side",
    "bright round mucosa on the left side",
    "ring shaped canal on the right side",
    "ring shaped canal on the left side",
    "two dark folds apart forming a wide gap",
    "single dark fold closed in the midline",
    "large dark opening in the centre",
};

// Signed distance helpers on normalized [0, 1] coordinates.
double seg_dist(double px, double py, double ax, double ay, double bx, double by) {
  const double vx = bx - ax, vy = by - ay;
  const double t = std::clamp(((px - ax) * vx + (py - ay) * vy) / (vx * vx + vy * vy), 0.0, 1.0);
  return std::hypot(px - (ax + t * vx), py - (ay + t * vy));
}

}  // namespace

Image render_synthetic(int class_id, Index raw_size, Rng& rng) {
  class_name(class_id);
  const Index border = 2 + static_cast<Index>(rng.below(4));
  const Index inner = raw_size - 2 * border;
  const double base_r = rng.uniform(0.55, 0.75), base_g = rng.uniform(0.25, 0.4),
               base_b = rng.uniform(0.25, 0.4);
  const double jx = rng.uniform(-0.05, 0.05), jy = rng.uniform(-0.05, 0.05);
  const double size = rng.uniform(0.9, 1.1);
  Image img = Image::zeros(3, raw_size, raw_size);
  for (Index y = 0; y < inner; ++y) {
    for (Index x = 0; x < inner; ++x) {
      const double u = (x + 0.5) / static_cast<double>(inner) - jx;
      const double v = (y + 0.5) / static_cast<double>(inner) - jy;
      // shade: +1 bright feature, -1 dark feature, 0 background
      double shade = 0.0;
      switch (class_id) {
        case 0:  // nose-right
        case 1: {
          const double cx = class_id == 0 ? 0.72 : 0.28;
          if (std::hypot(u - cx, v - 0.5) < 0.17 * size) shade = 1.0;
          break;
        }
        case 2:  // ear-right
        case 3: {
          const double cx = class_id == 2 ? 0.7 : 0.3;
          const double r = std::hypot(u - cx, v - 0.5);
          if (r > 0.11 * size && r < 0.2 * size) shade = 1.0;
          break;
        }
        case 4:  // vc-open: two folds diverging from the top
          if (seg_dist(u, v, 0.5, 0.2, 0.28, 0.8) < 0.05 * size ||
              seg_dist(u, v, 0.5, 0.2, 0.72, 0.8) < 0.05 * size) {
            shade = -1.0;
          }
          break;
        case 5:  // vc-closed
          if (seg_dist(u, v, 0.5, 0.15, 0.5, 0.85) < 0.06 * size) shade = -1.0;
          break;
        case 6:  // throat
          if (std::hypot((u - 0.5) / 1.4, v - 0.5) < 0.2 * size) shade = -1.0;
          break;
      }
      const double noise = rng.normal(0.0, 0.03);
      const double k = shade > 0 ? 1.5 : (shade < 0 ? 0.35 : 1.0);
      img.planes[0](border + y, border + x) = std::clamp(base_r * k + noise, 0.05, 1.0);
      img.planes[1](border + y, border + x) = std::clamp(base_g * k + noise, 0.05, 1.0);
      img.planes[2](border + y, border + x) = std::clamp(base_b * k + noise, 0.05, 1.0);
    }
  }
  return img;
}

DatasetManifest make_synthetic_dataset(const std::filesystem::path& dir,
                                       const SyntheticSpec& spec) {
  std::filesystem::create_directories(dir);
  DatasetManifest m;
  m.base_dir = dir;
  for (int c = 0; c < kNumClasses; ++c) {
    for (int i = 0; i < spec.per_class; ++i) {
      Rng rng(derive_seed(spec.seed, static_cast<std::uint64_t>(c), static_cast<std::uint64_t>(i)));
      ManifestRecord r;
      r.classification = std::string(class_name(c));
      r.path = r.classification + "_" + std::to_string(i) + ".ppm";
      r.type = "normal";
      r.description = "";
      if (spec.with_descriptions) r.description_en = kSyntheticDescriptions[static_cast<std::size_t>(c)];
      r.label = c;
      write_pnm(dir / r.path, render_synthetic(c, spec.raw_size, rng));
      m.records.push_back(std::move(r));
    }
  }
  write_manifest(dir / "manifest.jsonl", m);
  return m;
}

}  // namespace endoclip
