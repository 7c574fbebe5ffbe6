#include <filesystem>
#include <fstream>
#include <unistd.h>

#include "doctest.h"
#include "hetsed/config.hpp"

using namespace hetsed;

namespace {

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    path = std::filesystem::temp_directory_path() /
           ("hetsed_cfg_" + std::to_string(::getpid()) + "_" + std::to_string(counter()++));
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  static int& counter() {
    static int n = 0;
    return n;
  }
  std::string file(const std::string& name, const std::string& text) const {
    const auto p = path / name;
    std::ofstream out(p);
    out << text;
    return p.string();
  }
};

}  // namespace

TEST_CASE("sections, comments and typed getters") {
  const auto cfg = ConfigFile::parse_text(
      "# header comment\n"
      "[train]\n"
      "lr = 1e-3   # inline comment\n"
      "epochs = 12\n"
      "use_ema = true\n"
      "seed = 12345678901\n"
      "name = stage one\n"
      "\n"
      "[data]\n"
      "classes = Speech, Dishes ,Blender\n");
  CHECK(cfg.has_section("train"));
  CHECK(cfg.has("train", "lr"));
  CHECK(!cfg.has("train", "missing"));
  CHECK(cfg.get_double("train", "lr", 0.0) == 1e-3);
  CHECK(cfg.get_int("train", "epochs", 0) == 12);
  CHECK(cfg.get_bool("train", "use_ema", false));
  CHECK(cfg.get_u64("train", "seed", 0) == 12345678901ULL);
  CHECK(cfg.get_string("train", "name") == "stage one");
  CHECK(cfg.get_double("train", "absent", 2.5) == 2.5);
  CHECK(cfg.get_list("data", "classes") ==
        std::vector<std::string>{"Speech", "Dishes", "Blender"});
  CHECK_THROWS_AS((void)cfg.get_string("train", "missing"), ConfigError);
}

TEST_CASE("malformed values raise config errors with location") {
  const auto cfg = ConfigFile::parse_text("[a]\nx = abc\n", "test.cfg");
  CHECK_THROWS_WITH_AS((void)cfg.get_double("a", "x", 0.0),
                       doctest::Contains("not a number"), ConfigError);
  CHECK_THROWS_WITH_AS(ConfigFile::parse_text("[a]\nnot a key value line\n", "f.cfg"),
                       doctest::Contains("f.cfg:2"), ConfigError);
  CHECK_THROWS_AS(ConfigFile::parse_text("[a\n"), ConfigError);
}

TEST_CASE("later keys override and includes merge first") {
  TempDir dir;
  dir.file("base.cfg", "[train]\nlr = 1\nepochs = 3\n");
  const auto child = dir.file("child.cfg",
                              "include = base.cfg\n"
                              "[train]\nlr = 2\n");
  const auto cfg = ConfigFile::parse_file(child);
  CHECK(cfg.get_double("train", "lr", 0.0) == 2.0);      // overridden
  CHECK(cfg.get_int("train", "epochs", 0) == 3);         // inherited
  CHECK_THROWS_AS(ConfigFile::parse_file((dir.path / "absent.cfg").string()), ConfigError);
}

TEST_CASE("mapping link lines") {
  const auto cfg = ConfigFile::parse_text(
      "[vocab]\n"
      "desed = Speech, Dishes\n"
      "maestro = people_talking, cutlery\n"
      "[mapping.maestro_to_desed]\n"
      "people_talking -> Speech\n"
      "cutlery -> Dishes\n"
      "[mapping.desed_to_maestro]\n"
      "Speech -> people_talking\n");
  const auto& links = cfg.links("mapping.maestro_to_desed");
  REQUIRE(links.size() == 2);
  CHECK(links[0].first == "people_talking");
  CHECK(links[0].second == "Speech");

  const auto vocab = load_vocabulary(cfg);
  CHECK(vocab.num_classes() == 4);
  CHECK(vocab.index_of("cutlery") == 3);
  const auto mapping = load_mapping(cfg, vocab);
  CHECK(mapping.maestro_to_desed().size() == 2);
  CHECK(mapping.desed_to_maestro().size() == 1);
  CHECK(mapping.maestro_to_desed()[0].source == vocab.index_of("people_talking"));
  CHECK(mapping.maestro_to_desed()[0].target == vocab.index_of("Speech"));
}

TEST_CASE("vocabulary section is required to load a vocabulary") {
  const auto cfg = ConfigFile::parse_text("[other]\nx = 1\n");
  CHECK_THROWS_AS(load_vocabulary(cfg), ConfigError);
}

TEST_CASE("unknown classes in links are data errors") {
  const auto cfg = ConfigFile::parse_text(
      "[vocab]\ndesed = Speech\nmaestro = car\n"
      "[mapping.maestro_to_desed]\nghost -> Speech\n");
  const auto vocab = load_vocabulary(cfg);
  CHECK_THROWS_AS(load_mapping(cfg, vocab), DataError);
}
