// Copyright 2026 The ShiftMatch Authors
// SPDX-License-Identifier: Apache-2.0

#include "harness.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "shiftmatch/binio.hpp"

#ifndef SHIFTMATCH_VERSION
#define SHIFTMATCH_VERSION "0.0.0"
#endif

namespace shiftmatch::harness {

namespace fs = std::filesystem;

std::string version() { return SHIFTMATCH_VERSION; }

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::vector<std::string> split_list(std::string_view v) {
  std::vector<std::string> out;
  while (!v.empty()) {
    const auto comma = v.find(',');
    const auto item = trim(v.substr(0, comma));
    if (!item.empty()) out.emplace_back(item);
    if (comma == std::string_view::npos) break;
    v.remove_prefix(comma + 1);
  }
  return out;
}

template <class N>
N parse_number(std::string_view v, std::string_view key) {
  N out{};
  v = trim(v);
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigError("config key '" + std::string(key) + "': bad number '" + std::string(v) + "'");
  }
  return out;
}

bool parse_bool(std::string_view v, std::string_view key) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("config key '" + std::string(key) + "': expected true or false");
}

std::string num(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::string join(const std::vector<std::string>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + v[i];
  return s;
}

const std::set<std::string, std::less<>> kMethods{"plain",         "meanvar",  "shiftmatch",     "input-only",
                                                  "channel-joint", "full-cov", "post-activation"};

}  // namespace

// ---------------------------------------------------------------------------
// Config

ExperimentConfig ExperimentConfig::parse(std::string_view text, const fs::path& base) {
  ExperimentConfig c;
  auto path = [&](std::string_view v) {
    fs::path p{std::string(v)};
    return p.is_absolute() || base.empty() ? p : base / p;
  };
  std::size_t lineno = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++lineno;
    if (const auto h = line.find('#'); h != std::string_view::npos) line = line.substr(0, h);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key{trim(line.substr(0, eq))};
    const std::string_view v = trim(line.substr(eq + 1));
    if (key == "graph") c.graph = path(v);
    else if (key == "images") c.images = path(v);
    else if (key == "labels") c.labels = path(v);
    else if (key == "classes") c.classes = parse_number<std::size_t>(v, key);
    else if (key == "train_count") c.train_count = parse_number<std::size_t>(v, key);
    else if (key == "test_count") c.test_count = parse_number<std::size_t>(v, key);
    else if (key == "corruptions") c.corruptions = split_list(v);
    else if (key == "intensities") {
      c.intensities.clear();
      for (const auto& s : split_list(v)) c.intensities.push_back(parse_number<int>(s, key));
    } else if (key == "include_clean") c.include_clean = parse_bool(v, key);
    else if (key == "methods") c.methods = split_list(v);
    else if (key == "spec") c.spec = parse_cov_kind(v);
    else if (key == "placement") c.placement = std::string(v);
    else if (key == "eps") c.eps = parse_number<double>(v, key);
    else if (key == "stats_batch") c.stats_batch = parse_number<std::size_t>(v, key);
    else if (key == "members") c.members = parse_number<std::size_t>(v, key);
    else if (key == "epochs") c.train.epochs = parse_number<int>(v, key);
    else if (key == "lr") c.train.lr = parse_number<double>(v, key);
    else if (key == "momentum") c.train.momentum = parse_number<double>(v, key);
    else if (key == "weight_decay") c.train.weight_decay = parse_number<double>(v, key);
    else if (key == "batch") c.train.batch = parse_number<std::size_t>(v, key);
    else if (key == "cosine_schedule") c.train.cosine_schedule = parse_bool(v, key);
    else if (key == "seed") c.seed = parse_number<std::uint64_t>(v, key);
    else if (key == "out") c.out = path(v);
    else if (key == "record_timing") c.record_timing = parse_bool(v, key);
    else if (key == "theory_samples") c.theory_samples = parse_number<std::size_t>(v, key);
    else throw ConfigError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
  }
  for (int i : c.intensities) {
    if (i < 1 || i > 5) throw ConfigError("intensities must lie in 1..5, got " + std::to_string(i));
  }
  for (const auto& m : c.methods) {
    if (!kMethods.contains(m)) throw ConfigError("unknown method '" + m + "'");
  }
  for (const auto& name : c.corruptions) corruption_at(name, 1);
  if (c.placement != "pre" && c.placement != "post" && c.placement != "input-only") {
    throw ConfigError("placement must be pre, post or input-only");
  }
  if (c.eps < 0.0) throw ConfigError("eps must be non-negative");
  if (c.members == 0) throw ConfigError("members must be positive");
  return c;
}

ExperimentConfig ExperimentConfig::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path.parent_path());
}

std::string ExperimentConfig::canonical() const {
  std::ostringstream os;
  std::vector<std::string> lv;
  for (int i : intensities) lv.push_back(std::to_string(i));
  os << "graph=" << graph.string() << "\nimages=" << images.string() << "\nlabels=" << labels.string()
     << "\nclasses=" << classes << "\ntrain_count=" << train_count << "\ntest_count=" << test_count
     << "\ncorruptions=" << join(corruptions) << "\nintensities=" << join(lv) << "\ninclude_clean=" << include_clean
     << "\nmethods=" << join(methods) << "\nspec=" << to_string(spec) << "\nplacement=" << placement
     << "\neps=" << num(eps) << "\nstats_batch=" << stats_batch << "\nmembers=" << members
     << "\nepochs=" << train.epochs << "\nlr=" << num(train.lr) << "\nmomentum=" << num(train.momentum)
     << "\nweight_decay=" << num(train.weight_decay) << "\nbatch=" << train.batch
     << "\ncosine_schedule=" << train.cosine_schedule << "\nseed=" << seed << "\n";
  return os.str();
}

std::uint64_t ExperimentConfig::hash() const { return binio::fnv1a(canonical()); }

void Overrides::apply(ExperimentConfig& cfg) const {
  if (methods) {
    for (const auto& m : *methods) {
      if (!kMethods.contains(m)) throw ConfigError("unknown method '" + m + "'");
    }
    cfg.methods = *methods;
  }
  if (out) cfg.out = *out;
  if (eps) {
    if (*eps < 0.0) throw ConfigError("eps must be non-negative");
    cfg.eps = *eps;
  }
  if (spec) cfg.spec = parse_cov_kind(*spec);
  if (placement) {
    if (*placement != "pre" && *placement != "post" && *placement != "input-only") {
      throw ConfigError("placement must be pre, post or input-only");
    }
    cfg.placement = *placement;
  }
  if (seed) cfg.seed = *seed;
}

// ---------------------------------------------------------------------------
// Methods and files

std::string MethodSetup::stats_key() const { return std::string(to_string(kind)) + "-" + placement; }

MethodSetup method_setup(std::string_view name, const ExperimentConfig& cfg) {
  MethodSetup m{std::string(name), true, CovKind::KroneckerHW, "pre"};
  if (name == "plain") m.matched = false;
  else if (name == "meanvar") m.kind = CovKind::MeanVarOnly;
  else if (name == "shiftmatch") {
    m.kind = cfg.spec;
    m.placement = cfg.placement;
  } else if (name == "input-only") m.placement = "input-only";
  else if (name == "channel-joint") m.kind = CovKind::ChannelJoint;
  else if (name == "full-cov") m.kind = CovKind::PerChannelSpatial;
  else if (name == "post-activation") m.placement = "post";
  else throw ConfigError("unknown method '" + std::string(name) + "'");
  return m;
}

Workspace load_workspace(const ExperimentConfig& cfg) {
  for (const auto& p : {cfg.graph, cfg.images, cfg.labels}) {
    if (p.empty() || !fs::exists(p)) throw ConfigError("missing input file '" + p.string() + "'");
  }
  LayerGraph graph = LayerGraph::load(cfg.graph);
  Dataset all = load_idx(cfg.images, cfg.labels, cfg.classes);
  const Layout in = graph.input();
  if (all.images.dim(1) != in.channels || all.images.dim(2) != in.height || all.images.dim(3) != in.width) {
    throw ConfigError("images " + shape_str(all.images.shape()) + " do not match graph input " + layout_str(in));
  }
  if (cfg.train_count == 0 || cfg.train_count >= all.size()) {
    throw ConfigError("train_count must leave at least one test example");
  }
  auto [train, rest] = split(all, cfg.train_count);
  if (cfg.test_count != 0) {
    if (cfg.test_count > rest.size()) throw ConfigError("test_count exceeds the held-out examples");
    if (cfg.test_count < rest.size()) rest = split(rest, cfg.test_count).first;
  }
  return Workspace{std::move(graph), std::move(train), std::move(rest)};
}

fs::path weights_path(const ExperimentConfig& cfg, std::size_t member) {
  return cfg.out / "weights" / ("member-" + std::to_string(member) + ".smwt");
}

fs::path stats_path(const ExperimentConfig& cfg, const MethodSetup& m, std::size_t member) {
  return cfg.out / "stats" / m.stats_key() / ("member-" + std::to_string(member) + ".smts");
}

// ---------------------------------------------------------------------------
// Reports

const ReportRow* Report::find(std::string_view method, std::string_view corruption, int intensity) const {
  for (const auto& r : rows) {
    if (r.method == method && r.corruption == corruption && r.intensity == intensity) return &r;
  }
  return nullptr;
}

std::string to_csv(const Report& r) {
  std::string s(kCsvHeader);
  s += "\n";
  for (const auto& row : r.rows) {
    s += row.method + "," + row.corruption + "," + std::to_string(row.intensity) + "," + num(row.accuracy) + "," +
         num(row.nll) + "," + std::to_string(row.examples) + "," + num(row.ms) + "\n";
  }
  return s;
}

Report from_csv(std::string_view text) {
  Report r;
  bool header = true;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    const std::string_view line = trim(text.substr(0, nl));
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    if (line.empty()) continue;
    if (header) {
      if (line != kCsvHeader) throw FormatError("unexpected report header '" + std::string(line) + "'");
      header = false;
      continue;
    }
    const auto f = split_list(line);
    if (f.size() != 7) throw FormatError("report row has " + std::to_string(f.size()) + " fields");
    r.rows.push_back({f[0], f[1], parse_number<int>(f[2], "intensity"), parse_number<double>(f[3], "accuracy"),
                      parse_number<double>(f[4], "nll"), parse_number<std::size_t>(f[5], "examples"),
                      parse_number<double>(f[6], "ms")});
  }
  if (header) throw FormatError("empty report");
  return r;
}

nlohmann::json to_json(const Report& r) {
  nlohmann::json j;
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(r.config_hash));
  j["config_hash"] = hex;
  j["version"] = r.version;
  j["rows"] = nlohmann::json::array();
  for (const auto& row : r.rows) {
    j["rows"].push_back({{"method", row.method},
                         {"corruption", row.corruption},
                         {"intensity", row.intensity},
                         {"accuracy", row.accuracy},
                         {"nll", row.nll},
                         {"examples", row.examples},
                         {"ms", row.ms}});
  }
  return j;
}

Report from_json(const nlohmann::json& j) {
  try {
    Report r;
    r.config_hash = std::stoull(j.at("config_hash").get<std::string>(), nullptr, 16);
    r.version = j.at("version").get<std::string>();
    for (const auto& row : j.at("rows")) {
      r.rows.push_back({row.at("method").get<std::string>(), row.at("corruption").get<std::string>(),
                        row.at("intensity").get<int>(), row.at("accuracy").get<double>(),
                        row.at("nll").get<double>(), row.at("examples").get<std::size_t>(),
                        row.at("ms").get<double>()});
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("report json: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Commands

namespace {

void write_text(const fs::path& path, const std::string& text) {
  binio::write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

double elapsed_ms(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

namespace {
bool site_kinds_match(const LayerGraph& graph, const TrainStats& s) {
  for (std::size_t k = 0; k < s.sites.size(); ++k)
    if (s.sites[k].kind != effective_kind(graph, s.placement.sites[k], s.kind)) return false;
  return true;
}
}  // namespace

std::vector<TrainStats> ensure_stats(const ExperimentConfig& cfg, const Workspace& ws, const SampleSet& samples,
                                     const MethodSetup& m, bool force, std::ostream& log) {
  const MatchPlacement placement = MatchPlacement::parse(ws.graph, m.placement);
  std::vector<TrainStats> out;
  for (std::size_t k = 0; k < samples.size(); ++k) {
    const fs::path p = stats_path(cfg, m, k);
    if (!force && fs::exists(p)) {
      TrainStats s = read_train_stats(p);
      if (s.sample_id == samples[k].sample_id && s.graph_hash == ws.graph.hash() && s.kind == m.kind &&
          s.placement == placement && site_kinds_match(ws.graph, s)) {
        out.push_back(std::move(s));
        continue;
      }
    }
    const auto t0 = std::chrono::steady_clock::now();
    TrainStats s = acquire_train_stats(ws.graph, samples[k], ws.train.images, placement, m.kind, cfg.stats_batch);
    write_train_stats(p, s);
    log << "stats " << m.stats_key() << " member " << k << " " << placement.describe() << " ("
        << static_cast<long>(elapsed_ms(t0)) << " ms)\n";
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace

SampleSet cmd_train(const ExperimentConfig& cfg, std::ostream& log) {
  const Workspace ws = load_workspace(cfg);
  SampleSet samples;
  std::string summary = "member,seed,clean_accuracy,weights_fnv\n";
  for (std::size_t k = 0; k < cfg.members; ++k) {
    TrainConfig tc = cfg.train;
    tc.seed = cfg.seed + k;
    const auto t0 = std::chrono::steady_clock::now();
    WeightSample s = sgd_train(ws.graph, ws.train.images, ws.train.labels, tc, [&](int epoch, double loss) {
      log << "member " << k << " epoch " << epoch << " loss " << loss << "\n";
    });
    s.provenance = Provenance::EnsembleMember;
    const auto bytes = encode_weights(s);
    binio::write_file(weights_path(cfg, k), bytes);
    const Tensor probs = softmax(forward(ws.graph, s, ws.test.images).logits);
    const double acc = accuracy(probs, ws.test.labels);
    log << "member " << k << " clean accuracy " << acc << " (" << static_cast<long>(elapsed_ms(t0) / 1000) << " s)\n";
    summary += std::to_string(k) + "," + std::to_string(tc.seed) + "," + num(acc) + "," + hex64(binio::fnv1a(bytes)) +
               "\n";
    samples.push_back(std::move(s));
  }
  write_text(cfg.out / "train.csv", summary);
  return samples;
}

SampleSet load_samples(const ExperimentConfig& cfg) {
  SampleSet samples;
  for (std::size_t k = 0; k < cfg.members; ++k) {
    const fs::path p = weights_path(cfg, k);
    if (!fs::exists(p)) throw ConfigError("missing weights " + p.string() + " (run the train command first)");
    samples.push_back(read_weights(p));
  }
  return samples;
}

StatsTable cmd_stats(const ExperimentConfig& cfg, std::ostream& log) {
  const Workspace ws = load_workspace(cfg);
  const SampleSet samples = load_samples(cfg);
  for (const auto& s : samples) check_sample(ws.graph, s);
  StatsTable table;
  for (const auto& name : cfg.methods) {
    const MethodSetup m = method_setup(name, cfg);
    if (!m.matched || table.contains(m.stats_key())) continue;
    table[m.stats_key()] = ensure_stats(cfg, ws, samples, m, true, log);
  }
  return table;
}

Report cmd_eval(const ExperimentConfig& cfg, std::ostream& log) {
  const Workspace ws = load_workspace(cfg);
  const SampleSet samples = load_samples(cfg);
  for (const auto& s : samples) check_sample(ws.graph, s);
  StatsTable table;
  std::vector<MethodSetup> setups;
  for (const auto& name : cfg.methods) {
    setups.push_back(method_setup(name, cfg));
    const MethodSetup& m = setups.back();
    if (m.matched && !table.contains(m.stats_key())) {
      table[m.stats_key()] = ensure_stats(cfg, ws, samples, m, false, log);
    }
  }

  struct Cell {
    std::string corruption;
    int intensity;
    CorruptionOp op;
  };
  std::vector<Cell> cells;
  if (cfg.include_clean) cells.push_back({"clean", 0, CorruptionOp{}});
  for (std::size_t c = 0; c < cfg.corruptions.size(); ++c) {
    for (int i : cfg.intensities) {
      const std::uint64_t seed = cfg.seed * 1000003ULL + c * 16 + static_cast<std::uint64_t>(i);
      cells.push_back({cfg.corruptions[c], i, corruption_at(cfg.corruptions[c], i, seed)});
    }
  }

  Report report;
  report.config_hash = cfg.hash();
  report.version = version();
  for (const auto& cell : cells) {
    const Tensor x = cell.op.apply(ws.test.images);
    for (const auto& m : setups) {
      const auto t0 = std::chrono::steady_clock::now();
      Tensor probs;
      try {
        const std::vector<TrainStats> none;
        probs = bma_predict(ws.graph, samples, m.matched ? table.at(m.stats_key()) : none, x, cfg.eps);
      } catch (const NumericError& e) {
        throw NumericError("cell " + m.name + "/" + cell.corruption + "/" + std::to_string(cell.intensity) + ": " +
                           e.what());
      }
      ReportRow row{m.name, cell.corruption, cell.intensity, accuracy(probs, ws.test.labels),
                    categorical_nll(probs, ws.test.labels), ws.test.size(), 0.0};
      const double ms = elapsed_ms(t0);
      if (cfg.record_timing) row.ms = ms;
      log << row.method << " " << row.corruption << "/" << row.intensity << " acc " << row.accuracy << " nll "
          << row.nll << " (" << static_cast<long>(ms) << " ms)\n";
      report.rows.push_back(std::move(row));
    }
  }
  write_text(cfg.out / "report.csv", to_csv(report));
  write_text(cfg.out / "report.json", to_json(report).dump(2) + "\n");
  return report;
}

bool TheoryRow::pass() const { return std::isfinite(error) && error <= threshold; }

std::vector<TheoryRow> cmd_theory(const ExperimentConfig& cfg, std::ostream& log) {
  constexpr std::size_t kSide = 8;
  const auto spectrum = power_law_spectrum(kSide, kSide);
  const DatasetD train = synth_stationary(cfg.theory_samples, kSide, kSide, spectrum, cfg.seed);
  const DatasetD test = synth_stationary(cfg.theory_samples, kSide, kSide, spectrum, cfg.seed + 1);
  std::vector<TheoryRow> rows;
  auto run = [&](RemovalMode mode, double sigma) {
    TheoryRow row;
    row.mode = mode == RemovalMode::Population ? "population" : "empirical";
    row.sigma = sigma;
    row.threshold = mode == RemovalMode::Population ? 1e-4 : 5e-2;
    CorruptionOp op;
    if (sigma > 0.0) op = CorruptionOp{CorruptionOp::Kind::CirculantBlur, sigma, 0, 0, 0};
    try {
      row.error = exact_removal_check(train, test, op, mode, spectrum);
    } catch (const NumericError& e) {
      row.error = std::nan("");
      row.note = e.what();
    }
    log << row.mode << " sigma " << sigma << " error " << row.error << (row.pass() ? " pass" : " FAIL")
        << (row.note.empty() ? "" : " (" + row.note + ")") << "\n";
    rows.push_back(std::move(row));
  };
  run(RemovalMode::Population, 0.0);
  for (double s : {0.5, 1.0, 2.0}) run(RemovalMode::Population, s);
  for (double s : {0.5, 1.0, 2.0}) run(RemovalMode::Empirical, s);

  std::string csv = "mode,sigma,error,threshold,pass,note\n";
  for (const auto& r : rows) {
    std::string note = r.note;
    for (char& ch : note) {
      if (ch == ',') ch = ';';
    }
    csv += r.mode + "," + num(r.sigma) + "," + (std::isfinite(r.error) ? num(r.error) : "nan") + "," +
           num(r.threshold) + "," + (r.pass() ? "1" : "0") + "," + note + "\n";
  }
  write_text(cfg.out / "theory.csv", csv);
  return rows;
}

// ---------------------------------------------------------------------------
// CLI

int run_cli(int argc, char** argv) {
  CLI::App app{"ShiftMatch: test-time feature statistics matching"};
  app.require_subcommand(1);
  app.set_version_flag("--version", version());

  std::string config_path;
  std::string methods;
  Overrides ov;
  std::string out, spec, placement;
  double eps = 0.0;
  std::uint64_t seed = 0;
  auto* o_config = app.add_option("--config", config_path, "experiment config (key = value)");
  auto* o_methods = app.add_option("--methods", methods, "comma-separated method list");
  auto* o_out = app.add_option("--out", out, "output directory");
  auto* o_eps = app.add_option("--eps", eps, "relative ridge for test-side inverse square roots");
  auto* o_spec = app.add_option("--spec", spec, "covariance structure")
                     ->check(CLI::IsMember({"kron", "full", "channel-joint", "meanvar", "per-channel"}));
  auto* o_place = app.add_option("--placement", placement, "matching sites")
                      ->check(CLI::IsMember({"pre", "post", "input-only"}));
  auto* o_seed = app.add_option("--seed", seed, "random seed");

  auto* train = app.add_subcommand("train", "train an ensemble and write weight files");
  auto* stats = app.add_subcommand("stats", "acquire training statistics for matched methods");
  auto* eval = app.add_subcommand("eval", "evaluate methods over the corruption grid");
  auto* theory = app.add_subcommand("theory", "exact-removal checks on synthetic stationary data");
  for (auto* sub : {train, stats, eval, theory}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfigError;
  }

  try {
    ExperimentConfig cfg;
    if (*o_config) cfg = ExperimentConfig::load(config_path);
    else if (!theory->parsed()) throw ConfigError("--config is required for this command");
    if (*o_methods) ov.methods = split_list(methods);
    if (*o_out) ov.out = out;
    if (*o_eps) ov.eps = eps;
    if (*o_spec) ov.spec = spec;
    if (*o_place) ov.placement = placement;
    if (*o_seed) ov.seed = seed;
    ov.apply(cfg);

    if (train->parsed()) {
      cmd_train(cfg, std::cerr);
    } else if (stats->parsed()) {
      cmd_stats(cfg, std::cerr);
    } else if (eval->parsed()) {
      const Report r = cmd_eval(cfg, std::cerr);
      std::cout << to_csv(r);
    } else if (theory->parsed()) {
      const auto rows = cmd_theory(cfg, std::cerr);
      bool ok = true;
      std::cout << "mode,sigma,error,threshold,pass\n";
      for (const auto& r : rows) {
        std::cout << r.mode << "," << r.sigma << "," << r.error << "," << r.threshold << "," << (r.pass() ? 1 : 0)
                  << "\n";
        ok = ok && r.pass();
      }
      if (!ok) throw ThresholdError("exact-removal thresholds exceeded");
    }
    return kOk;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return kConfigError;
  } catch (const TrainingError& e) {
    std::cerr << "training error (epoch " << e.epoch() << "): " << e.what() << "\n";
    return kNumericError;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kNumericError;
  } catch (const ThresholdError& e) {
    std::cerr << "threshold failure: " << e.what() << "\n";
    return kThresholdFailure;
  } catch (const SpecError& e) {
    std::cerr << "spec error: " << e.what() << "\n";
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kOther;
  }
}

}  // namespace shiftmatch::harness
