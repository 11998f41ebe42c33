#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "dla/errors.hpp"
#include "dla/labelspace.hpp"

using namespace dla;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("dla_labelspace_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void write(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

const char* kCoco = R"({
  "images": [{"id": 7, "file_name": "a.png", "width": 100, "height": 80}],
  "annotations": [
    {"id": 1, "image_id": 7, "bbox": [10, 5, 20, 30], "category_id": 3},
    {"id": 2, "image_id": 7, "bbox": [90, 70, 20, 20], "category_id": 1}],
  "categories": [{"id": 1, "name": "text"}, {"id": 3, "name": "figure"}]
})";

}  // namespace

TEST(Taxonomy, IdsFollowPositions) {
  const auto t = common4_taxonomy();
  EXPECT_EQ(t.size(), 4u);
  EXPECT_EQ(*t.id_of("table"), 1);
  EXPECT_FALSE(t.id_of("caption").has_value());
}

TEST(Taxonomy, DuplicatesRejected) {
  Taxonomy t{"x", {"a", "a"}};
  EXPECT_THROW(t.validate(), ConfigError);
}

TEST(Mapping, BuiltinsAreTotalOverTheirSource) {
  for (const auto& name : builtin_mapping_names()) {
    const auto m = builtin_mapping(name);
    EXPECT_NO_THROW(m.validate()) << name;
    const auto table = m.id_table();
    EXPECT_EQ(table.size(), m.source.size()) << name;
    for (int t : table) EXPECT_LT(t, static_cast<int>(m.target.size()));
  }
}

TEST(Mapping, DocLayNetFourClassChoices) {
  const auto m = builtin_mapping("dln4");
  const auto table = m.id_table();
  const auto& src = m.source;
  const auto tgt = common4_taxonomy();
  EXPECT_EQ(table[*src.id_of("Picture")], *tgt.id_of("figure"));
  EXPECT_EQ(table[*src.id_of("Table")], *tgt.id_of("table"));
  EXPECT_EQ(table[*src.id_of("Text")], *tgt.id_of("text"));
  EXPECT_EQ(table[*src.id_of("Title")], *tgt.id_of("title"));
  EXPECT_EQ(table[*src.id_of("Caption")], -1);
}

TEST(Mapping, UnknownBuiltinListsOptions) {
  try {
    builtin_mapping("nope");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("dln4"), std::string::npos);
  }
}

TEST(Mapping, ParseRoundTrip) {
  const auto m = builtin_mapping("pln4");
  const auto again = parse_mapping(format_mapping(m), m.source, m.target);
  EXPECT_EQ(again.pairs, m.pairs);
}

TEST(Mapping, ParseErrors) {
  const Taxonomy s{"s", {"a", "b"}}, t{"t", {"x"}};
  EXPECT_NO_THROW(parse_mapping("a = x\nb = DROP # gone\n", s, t));
  EXPECT_THROW(parse_mapping("a = x\n", s, t), ConfigError);            // b missing
  EXPECT_THROW(parse_mapping("a = y\nb = DROP\n", s, t), ConfigError);  // unknown target
  EXPECT_THROW(parse_mapping("a x\nb = DROP\n", s, t), ConfigError);    // malformed
  EXPECT_THROW(parse_mapping("a = x\na = x\nb = DROP\n", s, t), ConfigError);
}

TEST(Coco, LoadReindexesByNameAndClips) {
  const auto dir = temp_dir("load");
  write(dir / "ann.json", kCoco);
  const auto ds = load_coco(dir / "ann.json");
  EXPECT_EQ(ds.taxonomy.categories, (std::vector<std::string>{"figure", "text"}));
  ASSERT_EQ(ds.annotations.size(), 2u);
  EXPECT_EQ(ds.annotations[0].category, 0);
  EXPECT_EQ(ds.annotations[0].box, (Box{10, 5, 30, 35}));
  EXPECT_EQ(ds.annotations[1].box, (Box{90, 70, 100, 80}));
  EXPECT_EQ(ds.image_path(ds.images[0]), dir / "a.png");
}

TEST(Coco, SaveLoadRoundTrip) {
  const auto dir = temp_dir("roundtrip");
  write(dir / "ann.json", kCoco);
  const auto ds = load_coco(dir / "ann.json");
  save_coco(ds, dir / "out.json");
  auto again = load_coco(dir / "out.json");
  again.taxonomy.name = ds.taxonomy.name;
  EXPECT_EQ(again, ds);
}

TEST(Coco, MalformedRecordsNamed) {
  const auto dir = temp_dir("bad");
  write(dir / "a.json", R"({"images": [{"id": 1, "file_name": "a.png", "width": 10, "height": 10}],
    "annotations": [{"id": 42, "image_id": 1, "bbox": [0, 0, 1], "category_id": 1}],
    "categories": [{"id": 1, "name": "text"}]})");
  try {
    load_coco(dir / "a.json");
    FAIL();
  } catch (const IngestionError& e) {
    EXPECT_NE(std::string(e.what()).find("42"), std::string::npos);
  }
  write(dir / "b.json", "{not json");
  EXPECT_THROW(load_coco(dir / "b.json"), IngestionError);
  write(dir / "c.json", R"({"images": [], "categories": []})");
  EXPECT_THROW(load_coco(dir / "c.json"), IngestionError);
  EXPECT_THROW(load_coco(dir / "missing.json"), IoError);
}

TEST(Remap, DropsAndRelabels) {
  Dataset ds;
  ds.taxonomy = {"s", {"a", "b", "c"}};
  ds.images = {{1, "x.png", 10, 10}};
  ds.annotations = {{1, {0, 0, 1, 1}, 0}, {1, {0, 0, 2, 2}, 1}, {1, {0, 0, 3, 3}, 2}};
  const Taxonomy t{"t", {"p", "q"}};
  const auto m = parse_mapping("a = q\nb = DROP\nc = p\n", ds.taxonomy, t);
  const auto out = remap(ds, m);
  EXPECT_EQ(out.taxonomy, t);
  ASSERT_EQ(out.annotations.size(), 2u);
  EXPECT_EQ(out.annotations[0].category, 1);
  EXPECT_EQ(out.annotations[1].category, 0);
  Dataset other = ds;
  other.taxonomy = {"o", {"z"}};
  EXPECT_THROW(remap(other, m), ConfigError);
}

TEST(UnlabeledImages, ScanSortsPngFiles) {
  const auto dir = temp_dir("scan");
  write(dir / "b.png", "");
  write(dir / "a.png", "");
  write(dir / "notes.txt", "");
  const auto u = UnlabeledImages::scan_directory(dir);
  ASSERT_EQ(u.images.size(), 2u);
  EXPECT_EQ(u.images[0].file_name, "a.png");
  EXPECT_THROW(UnlabeledImages::scan_directory(dir / "nope"), IoError);
}
