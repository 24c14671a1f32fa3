// qsdiff: batch front-end for the quantitative differentiation library.

#include "qsdiff/qsdiff.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <iostream>

namespace {

using namespace qsdiff;

// Recorded lower bound for per-level min omega of the rho = 0.1 Kahane map
// (M = 3, m = 4, J = 8).
constexpr double kKahaneC0 = 0.0514;

struct Flag {
  std::string name;
  std::string help;
  bool is_switch = false;
};

const std::vector<Flag>& flag_inventory() {
  static const std::vector<Flag> flags = {
      {"config", "experiment config file (key = value, [section] per subcommand)"},
      {"map", "map kind: identity, affine, kahane, snowflake, bump, sampled"},
      {"d", "domain dimension (1..3)"},
      {"corner", "root cube lower corner, comma separated (default 0)"},
      {"side", "root cube side length (default 1)"},
      {"matrix", "affine linear part, rows separated by ';' (e.g. 2,1;0,1)"},
      {"offset", "affine offset, comma separated"},
      {"rho", "kahane edge mass in (0, 1/3)"},
      {"amplitude", "snowflake amplitude"},
      {"frequency", "snowflake or bump frequency"},
      {"phase", "bump phase"},
      {"samples", "sampled map CSV (header d,D,J_s; rows lattice index then image)"},
      {"scale", "multiply the map by this factor"},
      {"J", "tree depth below the root"},
      {"J-max", "largest accepted depth (default 10/7/5 for d = 1/2/3)"},
      {"Js", "depth list for the dorronsoro table (default 5,6,7)"},
      {"m", "quadrature refinement: 2^(d m) midpoint nodes per cube"},
      {"M", "cube dilation for omega fields (default 3)"},
      {"proof-M", "use the dilation 30000 d", true},
      {"eps", "corona omega threshold"},
      {"tau", "corona linear drift tolerance / good-set tolerance"},
      {"theta", "extraction measure loss"},
      {"delta", "chain-check delta"},
      {"c0", "kahane-profile lower bound for per-level min omega"},
      {"step", "finite-difference step"},
      {"pairs", "distortion sample pairs"},
      {"seed", "random seed"},
      {"level", "heat-map level"},
      {"region", "region index for whitney/extension"},
      {"grid-m", "extension dump grid refinement"},
      {"weights", "weight CSV (rows: leaf index, w)"},
      {"chain", "also run the scale-chain check and write its CSV", true},
      {"verbose", "full member listing in region dumps", true},
      {"out", "output directory (default .)"},
  };
  return flags;
}

std::string inventory_text() {
  std::ostringstream os;
  os << "flags:\n";
  for (const auto& f : flag_inventory()) os << "  --" << f.name << (f.is_switch ? "" : " <value>") << "  " << f.help << '\n';
  return os.str();
}

// ---------------------------------------------------------------------------

std::vector<double> parse_list(const std::string& text, const Settings& s, const std::string& key) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      const std::string t = trim(item);
      out.push_back(std::stod(t, &used));
      if (used != t.size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw ParameterError(s.origin(key) + ": field '" + key + "' expects comma-separated numbers, got '" + text + "'");
    }
  }
  return out;
}

struct Context {
  std::string command;
  Config cfg;
  std::string out_dir = ".";
  bool verbose = false;
  bool chain = false;

  Settings settings() const { return Settings(cfg, command); }

  std::string path(const std::string& name) const { return (std::filesystem::path(out_dir) / name).string(); }
};

int default_j_max(int d) { return d == 1 ? 10 : (d == 2 ? 7 : 5); }

struct Common {
  int d = 1;
  Grid grid;
  DyadicCube root;
  int J = 0;
  int m = 4;
  double M = 3.0;
  double eps = 0.05;
  double tau = 0.3;
  double theta = 0.1;
  std::uint64_t seed = 1;
  MapSpec map = MapSpec::identity(1);
};

MapSpec build_map(const Settings& s, int d, const Box& root_box) {
  const std::string kind = s.str("map", "identity");
  MapSpec f = MapSpec::identity(d);
  if (kind == "identity") {
    f = MapSpec::identity(d);
  } else if (kind == "affine") {
    Mat a = Mat::Identity(d, d) * 2.0;
    for (int i = 0; i + 1 < d; ++i) a(i, i + 1) = 0.5;
    if (s.has("matrix")) {
      std::vector<std::vector<double>> rows;
      std::stringstream ss(s.str("matrix", ""));
      std::string row;
      while (std::getline(ss, row, ';')) rows.push_back(parse_list(row, s, "matrix"));
      s.check(!rows.empty() && static_cast<int>(rows.front().size()) == d, "matrix", "needs d columns per row");
      s.check(rows.size() <= 4, "matrix", "allows at most 4 rows (D <= 4)");
      a = Mat(static_cast<int>(rows.size()), d);
      for (std::size_t i = 0; i < rows.size(); ++i) {
        s.check(static_cast<int>(rows[i].size()) == d, "matrix", "rows must have equal length");
        for (int j = 0; j < d; ++j) a(static_cast<int>(i), j) = rows[i][static_cast<std::size_t>(j)];
      }
    }
    Vec b = Vec::Constant(a.rows(), 0.1);
    if (s.has("offset")) {
      const auto v = parse_list(s.str("offset", ""), s, "offset");
      s.check(static_cast<int>(v.size()) == a.rows(), "offset", "must have one entry per matrix row");
      for (std::size_t i = 0; i < v.size(); ++i) b(static_cast<int>(i)) = v[i];
    }
    s.check(operator_norm(a) > 0.0, "matrix", "must be nonzero");
    f = MapSpec::affine(AffineMap(a, b));
  } else if (kind == "kahane") {
    s.check(d == 1, "d", "must be 1 for the kahane map");
    const double rho = s.real("rho", 0.1);
    s.check(rho > 0.0 && rho < 1.0 / 3.0, "rho", "must lie in (0, 1/3)");
    f = MapSpec::kahane(rho);
  } else if (kind == "snowflake") {
    const double amp = s.real("amplitude", 0.1);
    const int freq = s.integer("frequency", 2);
    s.check(freq >= 1, "frequency", "must be >= 1");
    s.check(amp >= 0.0 && amp * freq < 0.5, "amplitude", "must satisfy 0 <= amplitude * frequency < 1/2");
    f = MapSpec::snowflake(d, amp, freq);
  } else if (kind == "bump") {
    const int freq = s.integer("frequency", 1);
    s.check(freq >= 0, "frequency", "must be >= 0");
    f = MapSpec::bump(d, freq, s.real("phase", 0.3));
  } else if (kind == "sampled") {
    s.check(s.has("samples"), "samples", "is required for sampled maps");
    std::ifstream in(s.str("samples", ""));
    s.check(static_cast<bool>(in), "samples", "names a file that cannot be opened");
    f = MapSpec::sampled(SampledGrid::read_csv(in, root_box));
    s.check(f.dim_in() == d, "d", "does not match the sampled map");
  } else {
    throw ParameterError(s.origin("map") + ": field 'map' has unknown kind '" + kind + "'");
  }
  s.check(f.dim_out() <= 4, "map", "image dimension must be <= 4");
  const double sc = s.real("scale", 1.0);
  s.check(sc != 0.0 && std::isfinite(sc), "scale", "must be finite and nonzero");
  return sc == 1.0 ? f : f.scaled(sc);
}

Common read_common(const Context& ctx, int default_j) {
  const Settings s = ctx.settings();
  Common c;
  c.d = s.integer("d", 1);
  s.check(c.d >= 1 && c.d <= 3, "d", "must be 1, 2 or 3");
  c.grid = Grid::unit(c.d);
  if (s.has("corner")) {
    const auto v = parse_list(s.str("corner", ""), s, "corner");
    s.check(static_cast<int>(v.size()) == c.d, "corner", "needs d coordinates");
    for (int i = 0; i < c.d; ++i) c.grid.corner(i) = v[static_cast<std::size_t>(i)];
  }
  c.grid.base_side = s.real("side", 1.0);
  s.check(c.grid.base_side > 0.0, "side", "must be positive");
  c.root = DyadicCube{0, {}};
  const int j_max = s.integer("J-max", default_j_max(c.d));
  s.check(j_max >= 0, "J-max", "must be >= 0");
  c.J = s.integer("J", std::min(default_j, j_max));
  s.check(c.J >= 0 && c.J <= j_max, "J", "must lie in [0, " + std::to_string(j_max) + "]");
  c.m = s.integer("m", 4);
  s.check(c.m >= 1 && c.d * c.m <= 18, "m", "must be >= 1 with d m <= 18");
  c.M = s.has("proof-M") && s.str("proof-M", "") == "true" ? 30000.0 * c.d : s.real("M", 3.0);
  s.check(c.M >= 1.0, "M", "must be >= 1");
  c.eps = s.real("eps", 0.05);
  s.check(c.eps > 0.0 && c.eps < 1.0, "eps", "must lie in (0,1)");
  c.tau = s.real("tau", 0.3);
  s.check(c.tau > 0.0 && c.tau < 1.0, "tau", "must lie in (0,1)");
  c.theta = s.real("theta", 0.1);
  s.check(c.theta > 0.0 && c.theta < 1.0, "theta", "must lie in (0,1)");
  const int seed = s.integer("seed", 1);
  s.check(seed >= 0, "seed", "must be >= 0");
  c.seed = static_cast<std::uint64_t>(seed);
  c.map = build_map(s, c.d, c.grid.box(c.root));
  return c;
}

SmallOmegaOptions omega_options(const Common& c) {
  SmallOmegaOptions o;
  o.seed = 0x0A11CE ^ c.seed;
  return o;
}

nlohmann::json table_json(const Table& t) {
  auto rows = nlohmann::json::array();
  for (const auto& r : t.rows) {
    nlohmann::json obj = nlohmann::json::object();
    for (std::size_t i = 0; i < r.size(); ++i) {
      char* end = nullptr;
      const double v = std::strtod(r[i].c_str(), &end);
      if (!r[i].empty() && end && *end == '\0' && std::isfinite(v)) obj[t.columns[i]] = v;
      else obj[t.columns[i]] = r[i];
    }
    rows.push_back(std::move(obj));
  }
  return rows;
}

void emit(const Context& ctx, const std::string& stem, const Table& t) {
  write_file(ctx.path(stem + ".csv"), t.csv());
  write_file(ctx.path(stem + ".json"), table_json(t).dump(2) + "\n");
}

std::string yes_no(bool b) { return b ? "1" : "0"; }
std::string num(double v) { return fmt_double(v); }

std::string token(const Grid& g, const DyadicCube& q) { return cube_token(q, g.dim, g.shift); }

std::vector<double> values_at_level(const OmegaField& field, int level) {
  std::vector<double> v;
  for (const auto& r : field.records())
    if (r.cube.level == level) v.push_back(r.omega);
  return v;
}

// ---------------------------------------------------------------------------

int cmd_omega_field(const Context& ctx) {
  const Common c = read_common(ctx, 4);
  const Settings s = ctx.settings();
  const auto field = compute_omega_field(c.map, c.grid, c.root, c.J, c.M, c.m, omega_options(c));
  Table t{{"cube", "omega", "big_omega", "op_norm", "attained"}, {}};
  for (const auto& r : field.records())
    t.add({token(c.grid, r.cube), num(r.omega), num(r.big_omega), r.affine ? num(r.affine->op_norm()) : "nan",
           yes_no(r.attained)});
  emit(ctx, "omega_field", t);
  const int level = s.integer("level", std::min(c.J, 5));
  s.check(level >= 0 && level <= c.J, "level", "must lie in [0, J]");
  if (c.d <= 2) {
    write_file(ctx.path("omega_field.svg"),
               heatmap_svg(values_at_level(field, level), c.d, level, "omega at level " + std::to_string(level)));
  } else if (s.has("level")) {
    heatmap_svg({}, c.d, level, "");  // raises the unsupported-dimension error
  }
  double worst = 0.0;
  for (const auto& r : field.records()) worst = std::max(worst, r.omega);
  std::cout << "cubes " << field.records().size() << ", max omega " << num(worst) << '\n';
  return worst <= 0.5 + 1e-6 ? 0 : 2;
}

int cmd_carleson(const Context& ctx) {
  const Common c = read_common(ctx, 5);
  const auto field = compute_omega_field(c.map, c.grid, c.root, c.J, c.M, c.m, omega_options(c));
  const auto sum = carleson_sum(field, c.root);
  const auto norm = carleson_norm(field);
  Table prof{{"level", "min", "mean", "max", "sum"}, {}};
  for (const auto& l : level_profile(field))
    prof.add({std::to_string(l.level), num(l.min), num(l.mean), num(l.max), num(l.sum)});
  emit(ctx, "level_profile", prof);
  Table summary{{"total", "normalized", "carleson_norm", "argmax"}, {}};
  summary.add({num(sum.total), num(sum.normalized), num(norm.value), token(c.grid, norm.argmax)});
  emit(ctx, "carleson", summary);
  std::cout << "carleson sum " << num(sum.normalized) << ", norm " << num(norm.value) << '\n';
  return 0;
}

int cmd_dorronsoro(const Context& ctx) {
  Context local = ctx;
  if (!local.cfg.find(ctx.command, "map")) local.cfg.set(ctx.command, "map", "bump", "default");
  const Common c = read_common(local, 5);
  const Settings s = local.settings();
  std::vector<int> js;
  for (double v : parse_list(s.str("Js", "5,6,7"), s, "Js")) {
    s.check(v == std::floor(v) && v >= 0 && v <= s.integer("J-max", default_j_max(c.d)), "Js", "entries must be depths within J-max");
    js.push_back(static_cast<int>(v));
  }
  const double h = s.real("step", 1e-6);
  s.check(h > 0.0, "step", "must be positive");
  Table t{{"J", "sum", "grad_energy", "ratio", "ratio_2f", "status"}, {}};
  bool invariant = true;
  const MapSpec f2 = c.map.scaled(2.0);
  for (int j : js) {
    const auto r = dorronsoro_ratio(c.map, c.grid, c.root, j, c.m, h);
    const auto r2 = dorronsoro_ratio(f2, c.grid, c.root, j, c.m, h);
    if (r.status == DorronsoroStatus::ok && std::abs(r2.ratio - r.ratio) > 1e-12 * r.ratio) invariant = false;
    t.add({std::to_string(j), num(r.sum), num(r.grad_energy), num(r.ratio), num(r2.ratio),
           r.status == DorronsoroStatus::ok ? "ok" : "degenerate"});
  }
  emit(ctx, "dorronsoro", t);
  std::cout << "dorronsoro table: " << js.size() << " depths, 2f invariance " << (invariant ? "ok" : "FAILED") << '\n';
  return invariant ? 0 : 2;
}

int cmd_kahane_profile(const Context& ctx) {
  Context local = ctx;
  local.cfg.set(ctx.command, "map", "kahane", "kahane-profile");
  local.cfg.set(ctx.command, "d", "1", "kahane-profile");
  const Common c = read_common(local, 8);
  const Settings s = local.settings();
  const double rho = c.map.param();
  const auto field = compute_omega_field(c.map, c.grid, c.root, c.J, c.M, c.m, omega_options(c));
  const auto prof = level_profile(field);
  Table t{{"level", "min", "mean", "max"}, {}};
  double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
  for (const auto& l : prof) {
    t.add({std::to_string(l.level), num(l.min), num(l.mean), num(l.max)});
    lo = std::min(lo, l.min);
    hi = std::max(hi, l.min);
  }
  emit(ctx, "kahane_profile", t);
  // Level-to-level change of the per-level minimum over levels 2..J,
  // relative to the larger of the two.
  double worst_step = 0.0;
  for (std::size_t i = 3; i < prof.size(); ++i)
    worst_step = std::max(worst_step, std::abs(prof[i].min - prof[i - 1].min) / std::max(prof[i].min, prof[i - 1].min));
  const bool default_setup = std::abs(rho - 0.1) < 1e-15 && c.M == 3.0 && c.m == 4;
  const double c0 = s.real("c0", default_setup ? kKahaneC0 : 0.0);
  const int level = std::min(c.J, 5);
  write_file(ctx.path("kahane_profile.svg"),
             heatmap_svg(values_at_level(field, level), 1, level, "kahane omega at level " + std::to_string(level)));
  const bool ok = lo >= c0 && worst_step < 0.25;
  std::cout << "min omega " << num(lo) << " (c0 " << num(c0) << "), max level-to-level change " << num(worst_step)
            << (ok ? "" : "  FAILED") << '\n';
  return ok ? 0 : 2;
}

struct CoronaRun {
  Common c;
  OmegaField field;
  CoronaDecomposition dec;
};

std::unique_ptr<CoronaRun> run_corona(const Context& ctx, int default_j) {
  auto run = std::make_unique<CoronaRun>();
  run->c = read_common(ctx, default_j);
  const auto& c = run->c;
  run->field = compute_omega_field(c.map, c.grid, c.root, c.J, c.M, c.m, omega_options(c));
  run->dec = decompose(run->field, c.eps, c.tau);
  return run;
}

int cmd_corona(const Context& ctx) {
  const auto run = run_corona(ctx, 4);
  const auto& dec = run->dec;
  const auto pack = packing_report(dec);
  const auto audit = audit_structure(dec);
  write_file(ctx.path("corona_regions.txt"), region_dump(dec, ctx.verbose));
  Table t{{"regions", "bad", "bad_mass", "bad_bound", "region_mass", "region_bound", "carleson_constant", "partition",
           "coherent", "sibling_closed", "bracket", "z_disjoint", "volume_identity", "m2_below_half"},
          {}};
  t.add({std::to_string(dec.regions.size()), std::to_string(dec.bad.size()), num(pack.bad_mass), num(pack.bad_bound),
         num(pack.region_mass), num(pack.region_bound), num(pack.carleson_constant), yes_no(audit.partition_exact),
         yes_no(audit.coherent), yes_no(audit.sibling_closed), yes_no(audit.bracket_holds && audit.conditions_hold),
         yes_no(audit.z_disjoint), yes_no(audit.tiles), yes_no(pack.m2_diagnostic_holds)});
  emit(ctx, "corona", t);
  const bool ok = audit.partition_exact && audit.coherent && audit.sibling_closed && audit.conditions_hold &&
                  audit.bracket_holds && audit.tiles && audit.z_disjoint && pack.bad_bound_holds && pack.region_bound_holds;
  std::cout << dec.regions.size() << " regions, " << dec.bad.size() << " bad cubes";
  if (!ok) std::cout << "  FAILED: " << (audit.first_failure.empty() ? "packing bound" : audit.first_failure);
  std::cout << '\n';
  return ok ? 0 : 2;
}

const StoppingRegion& pick_region(const Context& ctx, const CoronaDecomposition& dec) {
  const Settings s = ctx.settings();
  const int idx = s.integer("region", 0);
  if (dec.regions.empty()) throw PropertyViolation("corona produced no regions");
  s.check(idx >= 0 && idx < static_cast<int>(dec.regions.size()), "region",
          "must lie in [0, " + std::to_string(dec.regions.size() - 1) + "]");
  return dec.regions[static_cast<std::size_t>(idx)];
}

int cmd_whitney(const Context& ctx) {
  const auto run = run_corona(ctx, 3);
  const Settings s = ctx.settings();
  const auto& region = pick_region(ctx, run->dec);
  const auto w = WhitneyDecomposition::for_region(region, run->c.grid);
  const int samples = s.integer("pairs", 10000);
  s.check(samples >= 1, "pairs", "must be >= 1");
  const auto audit = audit_whitney(w, samples, run->c.seed);
  Table t{{"piece", "R", "Q", "D"}, {}};
  for (std::size_t i = 0; i < w.pieces().size(); ++i) {
    const auto& p = w.pieces()[i];
    t.add({std::to_string(i), token(w.grid(), p.r), p.q ? token(w.grid(), *p.q) : "", num(p.dist_value)});
  }
  emit(ctx, "whitney", t);
  Table a{{"pieces", "samples", "min_lower_ratio", "max_upper_ratio", "bracket", "neighbor_ratio", "max_overlap",
           "maximal", "core_identity"},
          {}};
  a.add({std::to_string(w.pieces().size()), std::to_string(audit.samples), num(audit.min_lower_ratio),
         num(audit.max_upper_ratio), yes_no(audit.bracket_holds), num(audit.max_neighbor_ratio),
         std::to_string(audit.max_overlap), yes_no(audit.maximality_holds), yes_no(audit.core_identity_holds)});
  emit(ctx, "whitney_audit", a);
  const bool ok = audit.bracket_holds && audit.neighbor_holds && audit.maximality_holds && audit.core_identity_holds;
  std::cout << w.pieces().size() << " pieces, D/diam in [" << num(audit.min_lower_ratio) << ", "
            << num(audit.max_upper_ratio) << "]" << (ok ? "" : "  FAILED") << '\n';
  return ok ? 0 : 2;
}

const char* branch_name(Extension::Branch b) {
  switch (b) {
    case Extension::Branch::z: return "z";
    case Extension::Branch::whitney: return "whitney";
    case Extension::Branch::far: return "far";
  }
  return "?";
}

int cmd_extension(const Context& ctx) {
  const auto run = run_corona(ctx, 3);
  const Settings s = ctx.settings();
  const auto& region = pick_region(ctx, run->dec);
  const auto w = WhitneyDecomposition::for_region(region, run->c.grid);
  const Extension ext(region, w, run->c.map);
  const int d = run->c.d;
  const int grid_m = s.integer("grid-m", d == 1 ? 8 : (d == 2 ? 5 : 3));
  s.check(grid_m >= 1 && d * grid_m <= 15, "grid-m", "must be >= 1 with d grid-m <= 15");
  const auto diag = extension_diagnostics(ext, grid_m, run->c.eps, run->c.tau);
  std::vector<std::string> cols;
  for (int i = 0; i < d; ++i) cols.push_back("x" + std::to_string(i + 1));
  for (int k = 0; k < ext.top_map().dim_out(); ++k) cols.push_back("F" + std::to_string(k + 1));
  cols.push_back("branch");
  Table dump{cols, {}};
  for (const auto& x : sample_nodes(MapSpec::identity(d), w.window_box(), grid_m).x) {
    const auto v = ext.eval(x);
    std::vector<std::string> row;
    for (int i = 0; i < d; ++i) row.push_back(num(x(i)));
    for (int k = 0; k < v.y.size(); ++k) row.push_back(num(v.y(k)));
    row.push_back(branch_name(v.branch));
    dump.add(std::move(row));
  }
  emit(ctx, "extension_field", dump);
  Table t{{"grad_deviation_energy", "delta1", "delta2", "delta3", "grad_ratio", "omega_ratio", "far_field"}, {}};
  t.add({num(diag.grad_deviation_energy), num(diag.delta1), num(diag.delta2), num(diag.delta3), num(diag.grad_ratio),
         num(diag.omega_ratio), yes_no(diag.far_field_pass)});
  emit(ctx, "extension", t);
  std::cout << "gradient deviation energy " << num(diag.grad_deviation_energy) << ", far field "
            << (diag.far_field_pass ? "ok" : "FAILED") << '\n';
  return diag.far_field_pass ? 0 : 2;
}

int cmd_extract(const Context& ctx) {
  const auto run = run_corona(ctx, 4);
  const Settings s = ctx.settings();
  const auto& c = run->c;
  const int pairs = s.integer("pairs", 2000);
  s.check(pairs >= 100, "pairs", "must be >= 100");
  ExtractionResult res;
  try {
    res = extract_E(run->dec, c.theta);
  } catch (const DepthLimitedExtraction& e) {
    std::cerr << "qsdiff: " << e.what() << '\n';
    Table t{{"theta", "N", "fraction", "L_lower", "L_upper", "L", "scale"}, {}};
    t.add({num(c.theta), "", num(e.best_fraction), "", "", "", ""});
    emit(ctx, "extract", t);
    return 2;
  }
  const auto dist = distortion_report(c.map, c.grid, c.root, res, pairs, c.seed);
  Table t{{"theta", "N", "fraction", "L_lower", "L_upper", "L", "scale"}, {}};
  t.add({num(c.theta), std::to_string(res.n), num(res.measure_fraction), num(dist.l_lower), num(dist.l_upper),
         num(dist.l), num(dist.scale)});
  emit(ctx, "extract", t);
  bool ok = res.measure_fraction >= 1.0 - c.theta;
  if (ctx.chain) {
    const double delta = s.real("delta", 0.05);
    s.check(delta > 0.0 && 2.0 * std::sqrt(static_cast<double>(c.d)) * delta < 1.0, "delta",
            "must satisfy 0 < 2 sqrt(d) delta < 1");
    const auto chain = scale_chain_check(run->dec, res, c.map, delta);
    Table ct{{"top", "cubes", "min_log_margin"}, {}};
    for (const auto& r : chain.regions) ct.add({token(c.grid, r.top), std::to_string(r.cubes), num(r.min_log_margin)});
    emit(ctx, "extract_chain", ct);
    ok = ok && chain.holds;
  }
  std::cout << "N " << res.n << ", fraction " << num(res.measure_fraction) << ", L " << num(dist.l)
            << (ok ? "" : "  FAILED") << '\n';
  return ok ? 0 : 2;
}

WeightField read_weights(const Settings& s, int d) {
  const std::string path = s.str("weights", "");
  std::ifstream in(path);
  s.check(static_cast<bool>(in), "weights", "names a file that cannot be opened");
  std::vector<std::pair<long, double>> rows;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line[0] == '#' || line.rfind("leaf", 0) == 0) continue;
    const auto comma = line.find(',');
    try {
      if (comma == std::string::npos) throw std::invalid_argument("missing comma");
      rows.emplace_back(std::stol(line.substr(0, comma)), std::stod(line.substr(comma + 1)));
    } catch (const std::exception&) {
      throw ParameterError(path + ":" + std::to_string(lineno) + ": expected 'leaf,w'");
    }
  }
  int depth = 0;
  while ((std::size_t{1} << (d * depth)) < rows.size()) ++depth;
  if ((std::size_t{1} << (d * depth)) != rows.size())
    throw ParameterError(path + ": leaf count must be a power of 2^d");
  std::vector<double> w(rows.size(), -1.0);
  for (const auto& [i, v] : rows) {
    if (i < 0 || static_cast<std::size_t>(i) >= w.size() || w[static_cast<std::size_t>(i)] >= 0.0)
      throw ParameterError(path + ": leaf index " + std::to_string(i) + " out of range or repeated");
    w[static_cast<std::size_t>(i)] = v;
  }
  return WeightField(d, depth, std::move(w));
}

int cmd_weights(const Context& ctx) {
  const Settings s = ctx.settings();
  const int d = s.integer("d", 1);
  s.check(d >= 1 && d <= 3, "d", "must be 1, 2 or 3");
  const double tau = s.real("tau", 0.25);
  s.check(tau > 0.0 && tau < 1.0, "tau", "must lie in (0,1)");
  std::optional<WeightField> w;
  if (s.has("weights")) {
    w = read_weights(s, d);
  } else {
    const Common c = read_common(ctx, 8);
    w = WeightField::from_increments(c.map, c.grid.box(c.root), c.J);
  }
  const auto means = w->level_means(w->leaves());
  const double w0 = means[0][0];
  Table t{{"cube", "w_Q", "log_ratio"}, {}};
  for (int l = 0; l <= w->depth(); ++l)
    for (std::size_t a = 0; a < means[static_cast<std::size_t>(l)].size(); ++a) {
      const double wq = means[static_cast<std::size_t>(l)][a];
      t.add({cube_token(w->cube(l, a), w->dim()), num(wq), num(std::log(wq / w0))});
    }
  emit(ctx, "weights", t);
  const auto good = a_infty_good_set(*w, tau);
  const auto weak = weak_type_audit(*w);
  Table summary{{"bmo", "threshold", "fraction", "m_ratio", "guarantee", "weak_ratio", "weak_holds"}, {}};
  summary.add({num(good.bmo), num(good.threshold), num(good.measure_fraction), num(good.m_ratio),
               yes_no(good.guarantee_holds), num(weak.worst_ratio), yes_no(weak.holds)});
  emit(ctx, "weights_summary", summary);
  const bool ok = good.guarantee_holds && std::isfinite(good.m_ratio) && weak.holds;
  std::cout << "good-set fraction " << num(good.measure_fraction) << ", M ratio " << num(good.m_ratio)
            << (ok ? "" : "  FAILED") << '\n';
  return ok ? 0 : 2;
}

struct Command {
  const char* name;
  const char* help;
  int (*run)(const Context&);
};

const Command kCommands[] = {
    {"omega-field", "per-cube omega over the dyadic tree, CSV and heat map", cmd_omega_field},
    {"carleson", "Carleson sum of omega^2 and the level profile", cmd_carleson},
    {"dorronsoro", "Omega^2 sum over gradient energy across depths", cmd_dorronsoro},
    {"kahane-profile", "per-level omega profile of the Kahane map", cmd_kahane_profile},
    {"corona", "stopping-time decomposition with packing and structure audits", cmd_corona},
    {"whitney", "region Whitney decomposition dump and bracket audit", cmd_whitney},
    {"extension", "extension diagnostics and field dump", cmd_extension},
    {"extract", "bi-Lipschitz subset extraction and distortion report", cmd_extract},
    {"weights", "dyadic BMO / A-infinity tools on a weight", cmd_weights},
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"qsdiff: quantitative differentiation experiments"};
  app.require_subcommand(1);
  app.footer(inventory_text());
  std::map<std::string, std::map<std::string, std::string>> values;
  for (const auto& cmd : kCommands) {
    auto* sub = app.add_subcommand(cmd.name, cmd.help);
    auto& store = values[cmd.name];
    for (const auto& f : flag_inventory()) {
      if (f.is_switch) sub->add_flag("--" + f.name, f.help);
      else sub->add_option("--" + f.name, store[f.name], f.help);
    }
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "qsdiff: " << e.what() << "\n\n" << app.help() << '\n';
    return 1;
  }
  try {
    for (const auto& cmd : kCommands) {
      auto* sub = app.get_subcommand(cmd.name);
      if (!sub->parsed()) continue;
      Context ctx;
      ctx.command = cmd.name;
      const auto& store = values[cmd.name];
      if (sub->count("--config")) ctx.cfg = Config::load(store.at("config"));
      for (const auto& f : flag_inventory()) {
        if (f.name == "config" || !sub->count("--" + f.name)) continue;
        ctx.cfg.set(cmd.name, f.name, f.is_switch ? "true" : store.at(f.name), "flag --" + f.name);
      }
      const Settings s = ctx.settings();
      ctx.out_dir = s.str("out", ".");
      ctx.verbose = s.str("verbose", "false") == "true";
      ctx.chain = s.str("chain", "false") == "true";
      std::filesystem::create_directories(ctx.out_dir);
      return cmd.run(ctx);
    }
  } catch (const PropertyViolation& e) {
    std::cerr << "qsdiff: property check failed: " << e.what() << '\n';
    return 2;
  } catch (const Error& e) {
    std::cerr << "qsdiff: " << e.what() << '\n';
    return 1;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "qsdiff: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
