#include <gtest/gtest.h>

#include <map>
#include <set>

#include "fixtures.hpp"
#include "lsgcpd/config_io.hpp"
#include "lsgcpd/error.hpp"

using namespace lsgcpd;
namespace fx = lsgcpd::testing;

namespace {

std::string error_of(std::string_view text, const std::string& origin = "<config>") {
  Settings s;
  try {
    parse_settings(text, s, origin);
  } catch (const DataError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

// Defaults frozen from the documented design decisions of each module.
TEST(ConfigDefaults, MatchDocumentedValues) {
  const Settings s;
  EXPECT_EQ(s.model.alpha_max, 50.0);
  EXPECT_EQ(s.model.lambda, 0.5);
  EXPECT_EQ(s.model.volume_margin, 0.1);
  EXPECT_EQ(s.model.neighbors, 20);
  EXPECT_TRUE(s.model.consistent_normalizer);
  EXPECT_FALSE(s.model.use_cf);
  EXPECT_FALSE(s.model.trust_normals);
  EXPECT_EQ(s.em.max_iterations, 100);
  EXPECT_EQ(s.em.tol_nll, 1e-7);
  EXPECT_FALSE(s.em.recompute_w0);
}

TEST(ConfigKeys, NamesAreUniqueAndFindable) {
  std::set<std::string> names;
  for (const auto& key : config_keys()) {
    EXPECT_TRUE(names.insert(key.name).second) << key.name;
    EXPECT_FALSE(key.help.empty()) << key.name;
    EXPECT_EQ(find_config_key(key.name), &key);
  }
  EXPECT_EQ(names.size(), 18u);
  EXPECT_EQ(find_config_key("alpha-max"), find_config_key("alpha_max"));
  EXPECT_EQ(find_config_key("confidence-truncation-threshold")->name, "confidence_truncation_threshold");
  EXPECT_EQ(find_config_key("nope"), nullptr);
}

TEST(ConfigText, FormatThenParseRoundTrips) {
  Settings changed;
  changed.model.alpha_max = 12.5;
  changed.model.lambda = 0.1;
  changed.model.outlier_ratio = 1.0 / 3.0;
  changed.model.use_cf = true;
  changed.model.neighbors = 7;
  changed.model.error_c1 = 0.1 + 0.2;
  changed.em.max_iterations = 17;
  changed.em.tol_nll = 3e-11;
  changed.em.seed = 18446744073709551615ULL;
  changed.em.recompute_w0 = true;
  const std::string text = format_settings(changed);

  Settings back;
  parse_settings(text, back);
  EXPECT_EQ(format_settings(back), text);
  // Shortest round-trip formatting keeps every bit.
  EXPECT_EQ(back.model.outlier_ratio, 1.0 / 3.0);
  EXPECT_EQ(back.model.error_c1, 0.1 + 0.2);
  EXPECT_EQ(back.em.seed, 18446744073709551615ULL);
}

TEST(ConfigText, FormatListsKeysInOrder) {
  const std::string text = format_settings(Settings{});
  std::size_t pos = 0;
  for (const auto& key : config_keys()) {
    const std::size_t at = text.find(key.name + " = ", pos);
    ASSERT_NE(at, std::string::npos) << key.name;
    pos = at;
  }
  EXPECT_NE(text.find("alpha_max = 50\n"), std::string::npos);
  EXPECT_NE(text.find("consistent_normalizer = true\n"), std::string::npos);
}

TEST(ConfigText, SkipsCommentsSectionsAndBlanks) {
  Settings s;
  parse_settings("# comment\n; also comment\n\n[model]\n  alpha_max = 7  \nlambda=\"0.25\"\n", s);
  EXPECT_EQ(s.model.alpha_max, 7.0);
  EXPECT_EQ(s.model.lambda, 0.25);
  EXPECT_EQ(s.em.max_iterations, 100);
}

TEST(ConfigText, AcceptsDashedNamesAndBooleanSpellings) {
  Settings s;
  parse_settings("use-cf = yes\ntrust_normals = ON\nrecompute-w0 = 1\nconsistent_normalizer = false\n", s);
  EXPECT_TRUE(s.model.use_cf);
  EXPECT_TRUE(s.model.trust_normals);
  EXPECT_TRUE(s.em.recompute_w0);
  EXPECT_FALSE(s.model.consistent_normalizer);
}

TEST(ConfigText, ErrorsCarryOriginAndLine) {
  EXPECT_EQ(error_of("alpha_max = 3\nbogus = 1\n", "f.cfg"), "f.cfg:2: unknown key 'bogus'");
  EXPECT_EQ(error_of("\nalpha_max\n"), "<config>:2: expected 'key = value'");
  EXPECT_EQ(error_of("alpha_max = abc\n"), "<config>:1: alpha_max: expected a number, got 'abc'");
  EXPECT_EQ(error_of("neighbors = 2.5\n"), "<config>:1: neighbors: expected an integer, got '2.5'");
  EXPECT_EQ(error_of("use_cf = maybe\n"), "<config>:1: use_cf: expected a boolean, got 'maybe'");
}

TEST(ConfigText, LaterLinesOverrideEarlierOnes) {
  Settings s;
  parse_settings("alpha_max = 1\nalpha_max = 2\n", s);
  EXPECT_EQ(s.model.alpha_max, 2.0);
}

TEST(ConfigFile, LoadOverlaysBase) {
  const fx::TempDir dir("cfg");
  fx::write_text(dir / "a.cfg", "lambda = 0.75\n");
  Settings base;
  base.model.alpha_max = 9.0;
  const Settings s = load_settings(dir / "a.cfg", base);
  EXPECT_EQ(s.model.lambda, 0.75);
  EXPECT_EQ(s.model.alpha_max, 9.0);
}

TEST(ConfigFile, MissingFileIsDataError) {
  EXPECT_THROW(load_settings("/nonexistent/dir/x.cfg"), DataError);
  const fx::TempDir dir("cfg");
  fx::write_text(dir / "bad.cfg", "lambda = 0.75\nmax_iterations = many\n");
  try {
    load_settings(dir / "bad.cfg");
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_EQ(std::string(e.what()).rfind((dir / "bad.cfg").string() + ":2: max_iterations:", 0), 0u) << e.what();
  }
}
