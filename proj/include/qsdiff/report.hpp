#pragma once

// Experiment configs ("key = value" lines under [section] headers), CSV
// tables, and SVG heat maps.

#include "qsdiff/core.hpp"

#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <vector>

namespace qsdiff {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::string fmt_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

struct ConfigValue {
  std::string value;
  std::string origin;  // "file:line" or "flag --name"
};

class Config {
 public:
  using Section = std::map<std::string, ConfigValue>;

  static Config parse(std::istream& in, const std::string& source = "<config>") {
    Config c;
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line = line.substr(0, hash);
      line = trim(line);
      if (line.empty()) continue;
      const std::string where = source + ":" + std::to_string(lineno);
      if (line.front() == '[') {
        if (line.back() != ']') throw ParameterError(where + ": unterminated section header");
        section = trim(line.substr(1, line.size() - 2));
        if (section.empty()) throw ParameterError(where + ": empty section name");
        c.sections_[section];
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw ParameterError(where + ": expected 'key = value'");
      const std::string key = trim(line.substr(0, eq));
      const std::string value = trim(line.substr(eq + 1));
      if (key.empty()) throw ParameterError(where + ": empty key");
      if (c.sections_[section].count(key)) throw ParameterError(where + ": duplicate key '" + key + "'");
      c.sections_[section][key] = ConfigValue{value, where};
    }
    return c;
  }

  static Config parse_string(const std::string& text, const std::string& source = "<config>") {
    std::istringstream in(text);
    return parse(in, source);
  }

  static Config load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParameterError("cannot open config file " + path);
    return parse(in, path);
  }

  // Sections and keys in sorted order; global keys first.
  std::string serialize() const {
    std::ostringstream os;
    bool first = true;
    for (const auto& [name, keys] : sections_) {
      if (!name.empty()) {
        if (!first) os << '\n';
        os << '[' << name << "]\n";
      }
      for (const auto& [k, v] : keys) os << k << " = " << v.value << '\n';
      first = false;
    }
    return os.str();
  }

  void set(const std::string& section, const std::string& key, const std::string& value, const std::string& origin) {
    sections_[section][key] = ConfigValue{value, origin};
  }

  // Section value, falling back to the global section.
  const ConfigValue* find(const std::string& section, const std::string& key) const {
    for (const auto& s : {section, std::string()}) {
      auto it = sections_.find(s);
      if (it == sections_.end()) continue;
      auto kt = it->second.find(key);
      if (kt != it->second.end()) return &kt->second;
    }
    return nullptr;
  }

  const std::map<std::string, Section>& sections() const { return sections_; }

 private:
  std::map<std::string, Section> sections_;
};

// Typed lookups with origin-precise messages.
class Settings {
 public:
  Settings(const Config& c, std::string section) : c_(&c), section_(std::move(section)) {}

  bool has(const std::string& key) const { return c_->find(section_, key) != nullptr; }

  std::string str(const std::string& key, const std::string& fallback) const {
    const auto* v = c_->find(section_, key);
    return v ? v->value : fallback;
  }
  double real(const std::string& key, double fallback) const {
    const auto* v = c_->find(section_, key);
    if (!v) return fallback;
    try {
      std::size_t used = 0;
      const double x = std::stod(v->value, &used);
      if (used != v->value.size()) throw std::invalid_argument("trailing characters");
      return x;
    } catch (const std::exception&) {
      throw ParameterError(v->origin + ": field '" + key + "' expects a number, got '" + v->value + "'");
    }
  }
  int integer(const std::string& key, int fallback) const {
    const auto* v = c_->find(section_, key);
    if (!v) return fallback;
    try {
      std::size_t used = 0;
      const long x = std::stol(v->value, &used);
      if (used != v->value.size()) throw std::invalid_argument("trailing characters");
      return static_cast<int>(x);
    } catch (const std::exception&) {
      throw ParameterError(v->origin + ": field '" + key + "' expects an integer, got '" + v->value + "'");
    }
  }
  std::string origin(const std::string& key) const {
    const auto* v = c_->find(section_, key);
    return v ? v->origin : "default";
  }
  void check(bool ok, const std::string& key, const std::string& what) const {
    if (!ok) throw ParameterError(origin(key) + ": field '" + key + "' " + what);
  }

 private:
  const Config* c_;
  std::string section_;
};

// ---------------------------------------------------------------------------

struct Table {
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;

  void add(std::vector<std::string> row) {
    require(row.size() == columns.size(), "table row width mismatch");
    rows.push_back(std::move(row));
  }

  std::string csv() const {
    std::ostringstream os;
    for (std::size_t i = 0; i < columns.size(); ++i) os << (i ? "," : "") << columns[i];
    os << '\n';
    for (const auto& r : rows) {
      for (std::size_t i = 0; i < r.size(); ++i) {
        const bool quote = r[i].find_first_of(",\"\n") != std::string::npos;
        os << (i ? "," : "");
        if (quote) {
          os << '"';
          for (char ch : r[i]) os << (ch == '"' ? "\"\"" : std::string(1, ch));
          os << '"';
        } else {
          os << r[i];
        }
      }
      os << '\n';
    }
    return os.str();
  }
};

inline void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParameterError("cannot write " + path);
  out << text;
}

// ---------------------------------------------------------------------------
// Heat maps: d = 2 draws a 2^level x 2^level grid, d = 1 a strip of 2^level
// bars. Values are in lexicographic cube order at that level.

inline std::string heat_color(double t) {
  t = std::clamp(t, 0.0, 1.0);
  // white -> dark blue
  const int r = static_cast<int>(std::lround(255 * (1.0 - 0.85 * t)));
  const int g = static_cast<int>(std::lround(255 * (1.0 - 0.7 * t)));
  const int b = static_cast<int>(std::lround(255 * (1.0 - 0.35 * t)));
  char buf[16];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", r, g, b);
  return buf;
}

inline std::string heatmap_svg(const std::vector<double>& values, int d, int level, const std::string& title) {
  if (d == 3) throw ParameterError("unsupported for heat maps: d = 3 (use the CSV tables)");
  require(d == 1 || d == 2, "heat map dimension must be 1 or 2");
  const std::size_t n = std::size_t{1} << level;
  require(values.size() == (d == 2 ? n * n : n), "heat map value count must be 2^(d level)");
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (double v : values) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const bool flat = !(hi > lo);
  auto shade = [&](double v) { return heat_color(flat ? (v != 0.0 ? 0.5 : 0.0) : (v - lo) / (hi - lo)); };
  const double plot = 400.0;
  const double cell = plot / static_cast<double>(n);
  const double height = d == 2 ? plot : 60.0;
  std::ostringstream os;
  os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" << plot + 160 << "\" height=\""
     << height + 60 << "\">\n";
  os << "<text x=\"10\" y=\"20\" font-family=\"sans-serif\" font-size=\"14\">" << title << "</text>\n";
  os << "<g transform=\"translate(10,40)\" shape-rendering=\"crispEdges\">\n";
  if (d == 2) {
    // Row 0 at the top holds the largest second coordinate.
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        const double v = values[i * n + j];
        os << "<rect x=\"" << fmt_double(static_cast<double>(i) * cell) << "\" y=\""
           << fmt_double(static_cast<double>(n - 1 - j) * cell) << "\" width=\"" << fmt_double(cell) << "\" height=\""
           << fmt_double(cell) << "\" fill=\"" << shade(v) << "\"/>\n";
      }
  } else {
    for (std::size_t i = 0; i < n; ++i)
      os << "<rect x=\"" << fmt_double(static_cast<double>(i) * cell) << "\" y=\"0\" width=\"" << fmt_double(cell)
         << "\" height=\"" << fmt_double(height) << "\" fill=\"" << shade(values[i]) << "\"/>\n";
  }
  os << "</g>\n";
  os << "<g transform=\"translate(" << plot + 30 << ",40)\" font-family=\"sans-serif\" font-size=\"12\">\n";
  if (flat) {
    os << "<rect x=\"0\" y=\"0\" width=\"20\" height=\"20\" fill=\"" << shade(lo) << "\" stroke=\"#000\"/>\n";
    os << "<text x=\"26\" y=\"15\">" << fmt_double(lo) << "</text>\n";
  } else {
    for (int k = 0; k <= 4; ++k) {
      const double v = hi - (hi - lo) * k / 4.0;
      os << "<rect x=\"0\" y=\"" << k * 24 << "\" width=\"20\" height=\"20\" fill=\"" << shade(v) << "\" stroke=\"#000\"/>\n";
      os << "<text x=\"26\" y=\"" << k * 24 + 15 << "\">" << fmt_double(v) << "</text>\n";
    }
  }
  os << "</g>\n</svg>\n";
  return os.str();
}

}  // namespace qsdiff
