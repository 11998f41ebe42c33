#include "dla/labelspace.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "dla/errors.hpp"

namespace dla {
namespace {

using json = nlohmann::json;

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += ", ";
    out += items[i];
  }
  return out;
}

constexpr std::string_view kPln4 = R"(# PubLayNet -> four common classes
figure = figure
list = DROP
table = table
text = text
title = title
)";

constexpr std::string_view kDln4 = R"(# DocLayNet -> four common classes
Caption = DROP
Footnote = DROP
Formula = DROP
List-item = DROP
Page-footer = DROP
Page-header = DROP
Picture = figure
Section-header = DROP
Table = table
Text = text
Title = title
)";

constexpr std::string_view kDln10 = R"(# DocLayNet -> ten common classes
Caption = caption
Footnote = footnote
Formula = formula
List-item = DROP
Page-footer = page-footer
Page-header = page-header
Picture = picture
Section-header = section-header
Table = table
Text = text
Title = title
)";

// Maintainer-curated: the fine-grained correspondence is not published.
// Override with a mapping file when working with real M6Doc data.
constexpr std::string_view kM6doc10 = R"(# M6Doc (74 classes) -> ten common classes
# maintainer-curated best-effort correspondence; edit freely
QR code = DROP
advertisement = DROP
algorithm = DROP
answer = DROP
author = DROP
barcode = DROP
bill = DROP
blank = DROP
bracket = DROP
breakout = DROP
byline = DROP
caption = caption
catalogue = DROP
chapter title = section-header
code = DROP
correction = DROP
credit = DROP
dateline = DROP
drop cap = DROP
editor's note = DROP
endnote = footnote
examinee information = DROP
fifth-level title = section-header
figure = picture
first-level question number = DROP
first-level title = section-header
flag = DROP
folder = page-header
footer = page-footer
footnote = footnote
formula = formula
fourth-level section title = section-header
fourth-level title = section-header
header = page-header
headline = title
index = DROP
inside = DROP
institute = DROP
jump line = DROP
kicker = DROP
lead = text
marginal note = DROP
matching = DROP
mugshot = picture
option = DROP
ordered list = DROP
other question number = DROP
page number = page-footer
paragraph = text
part = DROP
play = DROP
poem = DROP
reference = DROP
sealing line = DROP
second-level question number = DROP
second-level title = section-header
section = DROP
section title = section-header
sidebar = DROP
sub section title = section-header
subhead = section-header
subsub section title = section-header
supplementary note = footnote
table = table
table caption = caption
table note = footnote
teasers = DROP
third-level question number = DROP
third-level title = section-header
title = title
translator = DROP
underscore = DROP
unordered list = DROP
weather forecast = DROP
)";

Taxonomy taxonomy_from_mapping_sources(std::string name, std::string_view text) {
  Taxonomy t{std::move(name), {}};
  std::istringstream in{std::string(text)};
  for (std::string line; std::getline(in, line);) {
    const auto hash = line.find('#');
    const std::string body = trim(std::string_view(line).substr(0, hash));
    if (body.empty()) continue;
    t.categories.push_back(trim(std::string_view(body).substr(0, body.find('='))));
  }
  return t;
}

}  // namespace

std::optional<int> Taxonomy::id_of(std::string_view category) const {
  for (std::size_t i = 0; i < categories.size(); ++i)
    if (categories[i] == category) return static_cast<int>(i);
  return std::nullopt;
}

void Taxonomy::validate() const {
  std::set<std::string> seen;
  for (const auto& c : categories)
    if (!seen.insert(c).second)
      throw ConfigError("taxonomy '" + name + "' has duplicate category '" + c + "'");
}

void CategoryMapping::validate() const {
  source.validate();
  target.validate();
  std::map<std::string, int> count;
  for (const auto& [src, dst] : pairs) {
    if (!source.id_of(src))
      throw ConfigError("mapping source '" + src + "' not in taxonomy '" + source.name + "'");
    if (dst && !target.id_of(*dst))
      throw ConfigError("mapping target '" + *dst + "' not in taxonomy '" + target.name + "'");
    ++count[src];
  }
  for (const auto& c : source.categories) {
    auto it = count.find(c);
    if (it == count.end() || it->second != 1)
      throw ConfigError("source category '" + c + "' must appear exactly once in mapping");
  }
}

std::vector<int> CategoryMapping::id_table() const {
  std::vector<int> table(source.size(), -1);
  for (const auto& [src, dst] : pairs)
    table[*source.id_of(src)] = dst ? *target.id_of(*dst) : -1;
  return table;
}

std::vector<Annotation> Dataset::annotations_for(std::int64_t image_id) const {
  std::vector<Annotation> out;
  for (const auto& a : annotations)
    if (a.image_id == image_id) out.push_back(a);
  return out;
}

UnlabeledImages UnlabeledImages::scan_directory(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".png") files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  UnlabeledImages out;
  out.root = dir;
  std::int64_t id = 0;
  for (const auto& f : files) out.images.push_back({id++, f.filename().string(), 0, 0});
  return out;
}

Taxonomy common4_taxonomy() { return {"common4", {"figure", "table", "text", "title"}}; }

Taxonomy common10_taxonomy() {
  return {"common10",
          {"caption", "footnote", "formula", "page-footer", "page-header", "picture",
           "section-header", "table", "text", "title"}};
}

Taxonomy publaynet_taxonomy() { return taxonomy_from_mapping_sources("publaynet", kPln4); }
Taxonomy doclaynet_taxonomy() { return taxonomy_from_mapping_sources("doclaynet", kDln4); }
Taxonomy m6doc_taxonomy() { return taxonomy_from_mapping_sources("m6doc", kM6doc10); }

std::vector<std::string> builtin_mapping_names() { return {"pln4", "dln4", "dln10", "m6doc10"}; }

std::string builtin_mapping_text(std::string_view name) {
  if (name == "pln4") return std::string(kPln4);
  if (name == "dln4") return std::string(kDln4);
  if (name == "dln10") return std::string(kDln10);
  if (name == "m6doc10") return std::string(kM6doc10);
  throw ConfigError("unknown mapping '" + std::string(name) +
                    "'; valid options: " + join(builtin_mapping_names()));
}

CategoryMapping builtin_mapping(std::string_view name) {
  const std::string text = builtin_mapping_text(name);
  if (name == "pln4") return parse_mapping(text, publaynet_taxonomy(), common4_taxonomy());
  if (name == "dln4") return parse_mapping(text, doclaynet_taxonomy(), common4_taxonomy());
  if (name == "dln10") return parse_mapping(text, doclaynet_taxonomy(), common10_taxonomy());
  return parse_mapping(text, m6doc_taxonomy(), common10_taxonomy());
}

CategoryMapping identity_mapping(const Taxonomy& taxonomy) {
  CategoryMapping m{taxonomy, taxonomy, {}};
  for (const auto& c : taxonomy.categories) m.pairs.emplace_back(c, c);
  return m;
}

CategoryMapping parse_mapping(std::string_view text, const Taxonomy& source,
                              const Taxonomy& target) {
  CategoryMapping m{source, target, {}};
  std::istringstream in{std::string(text)};
  int lineno = 0;
  for (std::string line; std::getline(in, line);) {
    ++lineno;
    const std::string body = trim(std::string_view(line).substr(0, line.find('#')));
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos)
      throw ConfigError("mapping line " + std::to_string(lineno) + ": expected 'source = target'");
    std::string src = trim(std::string_view(body).substr(0, eq));
    std::string dst = trim(std::string_view(body).substr(eq + 1));
    if (src.empty() || dst.empty())
      throw ConfigError("mapping line " + std::to_string(lineno) + ": empty side");
    if (dst == "DROP")
      m.pairs.emplace_back(std::move(src), std::nullopt);
    else
      m.pairs.emplace_back(std::move(src), std::move(dst));
  }
  m.validate();
  return m;
}

CategoryMapping load_mapping(const std::filesystem::path& path, const Taxonomy& source,
                             const Taxonomy& target) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open mapping file: " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_mapping(buf.str(), source, target);
}

std::string format_mapping(const CategoryMapping& mapping) {
  std::string out = "# " + mapping.source.name + " -> " + mapping.target.name + "\n";
  for (const auto& [src, dst] : mapping.pairs) out += src + " = " + dst.value_or("DROP") + "\n";
  return out;
}

Dataset load_coco(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open annotation file: " + path.string());
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw IngestionError(path.string() + ": malformed JSON: " + e.what());
  }
  for (const char* key : {"images", "annotations", "categories"})
    if (!doc.contains(key) || !doc[key].is_array())
      throw IngestionError(path.string() + ": missing array '" + std::string(key) + "'");

  Dataset ds;
  ds.root = path.parent_path();
  ds.taxonomy.name = path.stem().string();

  std::map<std::int64_t, std::string> cat_names;
  for (const auto& c : doc["categories"]) {
    if (!c.contains("id") || !c.contains("name"))
      throw IngestionError("category record missing 'id' or 'name'");
    const auto id = c["id"].get<std::int64_t>();
    if (!cat_names.emplace(id, c["name"].get<std::string>()).second)
      throw IngestionError("duplicate category id " + std::to_string(id));
  }
  std::vector<std::string> names;
  for (const auto& [id, name] : cat_names) names.push_back(name);
  std::sort(names.begin(), names.end());
  ds.taxonomy.categories = names;
  try {
    ds.taxonomy.validate();
  } catch (const ConfigError& e) {
    throw IngestionError(e.what());
  }

  std::map<std::int64_t, std::size_t> image_index;
  for (const auto& im : doc["images"]) {
    for (const char* key : {"id", "file_name", "width", "height"})
      if (!im.contains(key))
        throw IngestionError("image record " + (im.contains("id") ? im["id"].dump() : "?") +
                             " missing '" + key + "'");
    ImageRecord rec{im["id"].get<std::int64_t>(), im["file_name"].get<std::string>(),
                    im["width"].get<int>(), im["height"].get<int>()};
    if (rec.width <= 0 || rec.height <= 0)
      throw IngestionError("image record " + std::to_string(rec.id) + " has non-positive size");
    if (!image_index.emplace(rec.id, ds.images.size()).second)
      throw IngestionError("duplicate image id " + std::to_string(rec.id));
    ds.images.push_back(std::move(rec));
  }

  for (const auto& an : doc["annotations"]) {
    const std::string rid = an.contains("id") ? an["id"].dump() : "?";
    for (const char* key : {"image_id", "bbox", "category_id"})
      if (!an.contains(key))
        throw IngestionError("annotation record " + rid + " missing '" + key + "'");
    const auto& bb = an["bbox"];
    if (!bb.is_array() || bb.size() != 4)
      throw IngestionError("annotation record " + rid + " has malformed bbox");
    double v[4];
    for (int i = 0; i < 4; ++i) {
      if (!bb[i].is_number()) throw IngestionError("annotation record " + rid + " has non-numeric bbox");
      v[i] = bb[i].get<double>();
      if (!std::isfinite(v[i])) throw IngestionError("annotation record " + rid + " has non-finite bbox");
    }
    if (v[2] < 0.0 || v[3] < 0.0)
      throw IngestionError("annotation record " + rid + " has negative bbox extent");
    const auto image_id = an["image_id"].get<std::int64_t>();
    auto img = image_index.find(image_id);
    if (img == image_index.end())
      throw IngestionError("annotation record " + rid + " references unknown image " +
                           std::to_string(image_id));
    auto cat = cat_names.find(an["category_id"].get<std::int64_t>());
    if (cat == cat_names.end())
      throw IngestionError("annotation record " + rid + " references unknown category");
    const ImageRecord& rec = ds.images[img->second];
    Box box{v[0], v[1], v[0] + v[2], v[1] + v[3]};
    // Clip to the page; real exports occasionally overshoot by a pixel.
    box.x_min = std::clamp(box.x_min, 0.0, double(rec.width));
    box.x_max = std::clamp(box.x_max, 0.0, double(rec.width));
    box.y_min = std::clamp(box.y_min, 0.0, double(rec.height));
    box.y_max = std::clamp(box.y_max, 0.0, double(rec.height));
    ds.annotations.push_back({image_id, box, *ds.taxonomy.id_of(cat->second)});
  }
  return ds;
}

void save_coco(const Dataset& ds, const std::filesystem::path& path) {
  json doc;
  doc["images"] = json::array();
  for (const auto& im : ds.images)
    doc["images"].push_back(
        {{"id", im.id}, {"file_name", im.file_name}, {"width", im.width}, {"height", im.height}});
  doc["annotations"] = json::array();
  std::int64_t next_id = 1;
  for (const auto& a : ds.annotations)
    doc["annotations"].push_back(
        {{"id", next_id++},
         {"image_id", a.image_id},
         {"bbox", {a.box.x_min, a.box.y_min, a.box.width(), a.box.height()}},
         {"area", a.box.area()},
         {"iscrowd", 0},
         {"category_id", a.category + 1}});
  doc["categories"] = json::array();
  for (std::size_t i = 0; i < ds.taxonomy.size(); ++i)
    doc["categories"].push_back({{"id", i + 1}, {"name", ds.taxonomy.categories[i]}});

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw IoError("cannot open for writing: " + tmp);
    out << doc.dump(1) << '\n';
    if (!out) throw IoError("write failed: " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

Dataset remap(const Dataset& ds, const CategoryMapping& mapping) {
  if (!(ds.taxonomy.categories == mapping.source.categories))
    throw ConfigError("dataset taxonomy does not match mapping source '" + mapping.source.name + "'");
  const auto table = mapping.id_table();
  Dataset out;
  out.images = ds.images;
  out.root = ds.root;
  out.taxonomy = mapping.target;
  for (const auto& a : ds.annotations) {
    const int t = table.at(a.category);
    if (t < 0) continue;
    out.annotations.push_back({a.image_id, a.box, t});
  }
  return out;
}

}  // namespace dla
