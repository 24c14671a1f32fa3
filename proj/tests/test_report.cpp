#include "qsdiff/qsdiff.hpp"

#include <gtest/gtest.h>

using namespace qsdiff;

namespace {

std::string error_of(const std::string& text) {
  try {
    Config::parse_string(text, "exp.cfg");
  } catch (const ParameterError& e) {
    return e.what();
  }
  return "";
}

int count(const std::string& s, const std::string& needle) {
  int n = 0;
  for (auto p = s.find(needle); p != std::string::npos; p = s.find(needle, p + 1)) ++n;
  return n;
}

}  // namespace

TEST(Config, ParsesSectionsAndFallsBack) {
  const auto c = Config::parse_string("seed = 7\n# comment\n[corona]\neps = 0.05  # inline\n tau=0.3\n\n[extract]\nseed = 9\n");
  EXPECT_EQ(Settings(c, "corona").integer("seed", 0), 7);
  EXPECT_EQ(Settings(c, "extract").integer("seed", 0), 9);
  EXPECT_DOUBLE_EQ(Settings(c, "corona").real("eps", 1.0), 0.05);
  EXPECT_DOUBLE_EQ(Settings(c, "corona").real("tau", 1.0), 0.3);
  EXPECT_DOUBLE_EQ(Settings(c, "extract").real("eps", 1.0), 1.0);
  EXPECT_EQ(Settings(c, "corona").origin("eps"), "<config>:4");
}

TEST(Config, ErrorsNameTheLine) {
  EXPECT_EQ(error_of("a = 1\n[oops\n"), "exp.cfg:2: unterminated section header");
  EXPECT_EQ(error_of("\n\njust words\n"), "exp.cfg:3: expected 'key = value'");
  EXPECT_EQ(error_of("= 4\n"), "exp.cfg:1: empty key");
  EXPECT_EQ(error_of("[]\n"), "exp.cfg:1: empty section name");
  EXPECT_EQ(error_of("[s]\nk = 1\nk = 2\n"), "exp.cfg:3: duplicate key 'k'");
  const auto c = Config::parse_string("[corona]\nJ = four\neps = 0.1x\n", "exp.cfg");
  const Settings s(c, "corona");
  try {
    s.integer("J", 3);
    FAIL();
  } catch (const ParameterError& e) {
    EXPECT_STREQ(e.what(), "exp.cfg:2: field 'J' expects an integer, got 'four'");
  }
  EXPECT_THROW(s.real("eps", 0.1), ParameterError);
  EXPECT_THROW(s.check(false, "J", "out of range"), ParameterError);
  EXPECT_THROW(Config::load("/nonexistent/dir/x.cfg"), ParameterError);
}

TEST(Config, RoundTripIsIdempotent) {
  const std::string text = "seed=4\n[whitney]\nz = 1\na = 2\n[corona]\neps = 0.05\n# x\n";
  const auto once = Config::parse_string(text).serialize();
  const auto twice = Config::parse_string(once).serialize();
  EXPECT_EQ(once, twice);
  EXPECT_EQ(once, "seed = 4\n\n[corona]\neps = 0.05\n\n[whitney]\na = 2\nz = 1\n");
}

TEST(Table, CsvQuoting) {
  Table t{{"name", "value"}, {}};
  t.add({"plain", "1"});
  t.add({"a,b", "say \"hi\""});
  t.add({"two\nlines", ""});
  EXPECT_EQ(t.csv(), "name,value\nplain,1\n\"a,b\",\"say \"\"hi\"\"\"\n\"two\nlines\",\n");
  EXPECT_THROW(t.add({"short"}), ParameterError);
}

TEST(Format, Doubles) {
  EXPECT_EQ(fmt_double(0.1), "0.1");
  EXPECT_EQ(fmt_double(1.0 / 3), "0.333333333333");
  EXPECT_EQ(fmt_double(std::nan("")), "nan");
  EXPECT_EQ(fmt_double(-INFINITY), "-inf");
}

TEST(Heatmap, DeterministicAndShaped) {
  std::vector<double> v(16);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = 0.05 + 0.01 * static_cast<double>(i % 5);
  const auto a = heatmap_svg(v, 2, 2, "omega");
  EXPECT_EQ(a, heatmap_svg(v, 2, 2, "omega"));
  EXPECT_EQ(count(a, "<rect"), 16 + 5);
  EXPECT_EQ(a.rfind("<?xml", 0), 0u);

  std::vector<double> strip(32, 0.06);
  strip[3] = 0.07;
  EXPECT_EQ(count(heatmap_svg(strip, 1, 5, "kahane"), "<rect"), 32 + 5);
}

TEST(Heatmap, FlatFieldHasOneLegendEntry) {
  const auto zero = heatmap_svg(std::vector<double>(64, 0.0), 2, 3, "affine");
  EXPECT_EQ(count(zero, "<rect"), 64 + 1);
  EXPECT_EQ(count(zero, "fill=\"#ffffff\""), 65);
  EXPECT_NE(zero.find(">0</text>"), std::string::npos);

  const auto constant = heatmap_svg(std::vector<double>(8, 2.5), 1, 3, "c");
  EXPECT_EQ(count(constant, "<rect"), 8 + 1);
  EXPECT_EQ(count(constant, "fill=\"" + heat_color(0.5) + "\""), 9);
}

TEST(Heatmap, Errors) {
  EXPECT_THROW(heatmap_svg(std::vector<double>(8, 0.0), 3, 1, "x"), ParameterError);
  try {
    heatmap_svg({}, 3, 1, "x");
  } catch (const ParameterError& e) {
    EXPECT_NE(std::string(e.what()).find("unsupported for heat maps"), std::string::npos);
  }
  EXPECT_THROW(heatmap_svg(std::vector<double>(5, 0.0), 1, 2, "x"), ParameterError);
}
