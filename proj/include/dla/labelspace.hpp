#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "dla/geometry.hpp"

namespace dla {

/// Ordered category names; a category's id is its position.
struct Taxonomy {
  std::string name;
  std::vector<std::string> categories;

  std::size_t size() const { return categories.size(); }
  std::optional<int> id_of(std::string_view category) const;
  /// Throws ConfigError on duplicate names.
  void validate() const;

  friend bool operator==(const Taxonomy&, const Taxonomy&) = default;
};

/// Source category -> target category, or std::nullopt for DROP.
struct CategoryMapping {
  Taxonomy source;
  Taxonomy target;
  std::vector<std::pair<std::string, std::optional<std::string>>> pairs;

  void validate() const;
  /// Target id for each source id; -1 marks DROP.
  std::vector<int> id_table() const;
};

struct ImageRecord {
  std::int64_t id = 0;
  std::string file_name;  // relative to Dataset::root
  int width = 0;
  int height = 0;

  friend bool operator==(const ImageRecord&, const ImageRecord&) = default;
};

struct Annotation {
  std::int64_t image_id = 0;
  Box box;
  int category = 0;

  friend bool operator==(const Annotation&, const Annotation&) = default;
};

struct Dataset {
  std::vector<ImageRecord> images;
  std::vector<Annotation> annotations;
  Taxonomy taxonomy;
  std::filesystem::path root;

  std::filesystem::path image_path(const ImageRecord& rec) const { return root / rec.file_name; }
  std::vector<Annotation> annotations_for(std::int64_t image_id) const;

  friend bool operator==(const Dataset& a, const Dataset& b) {
    return a.images == b.images && a.annotations == b.annotations && a.taxonomy == b.taxonomy;
  }
};

/// Images-only view handed to the adaptation loop. It carries no labels.
struct UnlabeledImages {
  std::vector<ImageRecord> images;
  std::filesystem::path root;

  static UnlabeledImages from(const Dataset& ds) { return {ds.images, ds.root}; }
  /// Every *.png under `dir`, sorted by file name.
  static UnlabeledImages scan_directory(const std::filesystem::path& dir);
};

/// The four-class space shared by the synthetic benchmark and PubLayNet/DocLayNet.
Taxonomy common4_taxonomy();
Taxonomy common10_taxonomy();
Taxonomy publaynet_taxonomy();
Taxonomy doclaynet_taxonomy();
Taxonomy m6doc_taxonomy();

/// Valid names: pln4, dln4, dln10, m6doc10.
CategoryMapping builtin_mapping(std::string_view name);
std::vector<std::string> builtin_mapping_names();
/// The mapping-file text backing a builtin mapping.
std::string builtin_mapping_text(std::string_view name);
CategoryMapping identity_mapping(const Taxonomy& taxonomy);

/// Mapping files hold one `source = target|DROP` pair per line; `#` starts a
/// comment. Source and target taxonomies must be supplied.
CategoryMapping parse_mapping(std::string_view text, const Taxonomy& source,
                              const Taxonomy& target);
CategoryMapping load_mapping(const std::filesystem::path& path, const Taxonomy& source,
                             const Taxonomy& target);
std::string format_mapping(const CategoryMapping& mapping);

/// COCO subset: images (id, file_name, width, height), annotations
/// (image_id, bbox [x,y,w,h], category_id), categories (id, name).
/// Category ids are re-indexed from 0 in name order.
Dataset load_coco(const std::filesystem::path& path);
void save_coco(const Dataset& ds, const std::filesystem::path& path);

Dataset remap(const Dataset& ds, const CategoryMapping& mapping);

}  // namespace dla
