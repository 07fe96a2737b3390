#include "advmark/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include "advmark/perceptual.hpp"

namespace advmark {

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + "\"";
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (ch == '"') {
        quoted = false;
      } else {
        cur += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

std::string num(double v) {
  std::ostringstream os;
  os << std::setprecision(8) << v;
  return os.str();
}

std::string fixed(double v, int digits) {
  if (std::isnan(v)) return "-";
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

std::vector<std::string> ordered_unique(const std::vector<ExperimentRecord>& records,
                                        std::string ExperimentRecord::*field) {
  std::vector<std::string> out;
  std::set<std::string> seen;
  for (const auto& r : records)
    if (seen.insert(r.*field).second) out.push_back(r.*field);
  return out;
}

const DenoiserBundle& proxy_for(const AttackSpec& spec, const AttackContext& ctx) {
  const bool b = spec.get("proxy") != 0.0;
  const DenoiserBundle* d = b ? ctx.proxy_b : ctx.proxy_a;
  if (!d) throw StateError(std::string("regeneration proxy ") + (b ? "B" : "A") + " is not loaded");
  return *d;
}

const ModelBundle& need_bundle(const AttackContext& ctx, const AttackSpec& spec) {
  if (!ctx.bundle) throw StateError("attack " + spec.id() + " needs a model");
  return *ctx.bundle;
}

/// Parameter shown on the x axis of a sweep plot.
const char* sweep_key(AttackKind k) {
  switch (k) {
    case AttackKind::jpeg:
    case AttackKind::jpeg_real:
      return "Q";
    case AttackKind::gaussian_noise:
    case AttackKind::gaussian_blur:
      return "sigma";
    case AttackKind::brightness:
    case AttackKind::rotation:
      return "a";
    case AttackKind::crop:
    case AttackKind::dropout:
    case AttackKind::salt_pepper:
      return "p";
    case AttackKind::resize:
    case AttackKind::wevade:
    case AttackKind::defender:
    case AttackKind::black_s:
      return "r";
    case AttackKind::hue:
      return "delta";
    default:
      return nullptr;
  }
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char ch : s) {
    switch (ch) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += ch;
    }
  }
  return out;
}

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"};

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path.string());
  f << text;
  if (!f) throw IoError("write failed: " + path.string());
}

}  // namespace

std::string records_csv(const std::vector<ExperimentRecord>& records) {
  std::ostringstream os;
  os << kRecordHeader << '\n';
  for (const auto& r : records) {
    os << csv_field(r.run_id) << ',' << csv_field(r.model_tag) << ',' << csv_field(r.attack_id) << ','
       << num(r.bit_accuracy) << ',' << num(r.psnr) << ',' << num(r.ssim) << ',' << num(r.perceptual) << ','
       << r.wall_ms << ',' << r.seed << '\n';
  }
  return os.str();
}

void write_records(const std::vector<ExperimentRecord>& records, const std::filesystem::path& path) {
  write_text(path, records_csv(records));
}

std::vector<ExperimentRecord> read_records(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read " + path.string());
  std::string line;
  if (!std::getline(f, line) || split_csv_line(line) != split_csv_line(kRecordHeader)) {
    throw FormatError(path.string() + ": unexpected header");
  }
  std::vector<ExperimentRecord> out;
  int lineno = 1;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto cols = split_csv_line(line);
    if (cols.size() != 9) throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected 9 columns");
    try {
      ExperimentRecord r;
      r.run_id = cols[0];
      r.model_tag = cols[1];
      r.attack_id = cols[2];
      r.bit_accuracy = std::stod(cols[3]);
      r.psnr = std::stod(cols[4]);
      r.ssim = std::stod(cols[5]);
      r.perceptual = std::stod(cols[6]);
      r.wall_ms = std::stoll(cols[7]);
      r.seed = std::stoull(cols[8]);
      out.push_back(std::move(r));
    } catch (const std::logic_error&) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": malformed number");
    }
  }
  return out;
}

Image apply_attack(const AttackSpec& spec, const Image& xw, const std::vector<Message>& msgs, const Image& covers,
                   const AttackContext& ctx, std::uint64_t seed) {
  switch (spec.kind) {
    case AttackKind::identity:
      return xw;
    case AttackKind::jpeg:
    case AttackKind::gaussian_noise:
    case AttackKind::gaussian_blur:
    case AttackKind::brightness:
      return clamp_image(apply_distortion(Var<float>(xw), spec, seed).value());
    case AttackKind::combined:
      return clamp_image(combined_distortion(Var<float>(xw), expand_combined(spec), seed).value());
    case AttackKind::jpeg_real:
      return jpeg_codec(xw, static_cast<int>(std::lround(spec.get("Q"))));
    case AttackKind::regeneration:
      return clamp_image(regenerate(xw, proxy_for(spec, ctx), seed));
    case AttackKind::wevade:
      return wevade_attack(need_bundle(ctx, spec), xw, budget_from_spec(spec), seed);
    case AttackKind::defender:
      return defender_attack(need_bundle(ctx, spec), xw, msgs, budget_from_spec(spec));
    case AttackKind::black_s:
      if (!ctx.surrogate) throw StateError("black_s needs a trained surrogate");
      return black_s_attack(*ctx.surrogate, xw, budget_from_spec(spec));
    case AttackKind::black_q: {
      BlackQConfig cfg;
      cfg.tau = spec.get("tau");
      cfg.query_budget = static_cast<int>(spec.get("queries"));
      cfg.mc_samples = static_cast<int>(spec.get("mc"));
      cfg.bisections = static_cast<int>(spec.get("bisect"));
      const QueryOracle oracle = decoder_oracle(need_bundle(ctx, spec));
      std::vector<Image> out;
      for (int i = 0; i < xw.n(); ++i) {
        const Image one = xw.samples(i);
        try {
          out.push_back(black_q_attack(oracle, one, msgs.at(i), cfg, derive_seed(seed, "black-q", i)).image);
        } catch (const AttackInfeasible& e) {
          std::cerr << "warning: black_q on sample " << i << ": " << e.what() << '\n';
          out.push_back(one);
        }
      }
      return stack(out);
    }
    default:
      if (spec.geometric()) return apply_geometric(xw, spec, seed, &covers);
      throw ParameterError("unsupported attack " + spec.id());
  }
}

Image apply_attack_chain(const std::vector<AttackSpec>& chain, const Image& xw, const std::vector<Message>& msgs,
                         const Image& covers, const AttackContext& ctx, std::uint64_t seed) {
  Image x = xw;
  for (std::size_t i = 0; i < chain.size(); ++i) x = apply_attack(chain[i], x, msgs, covers, ctx, derive_seed(seed, "chain", i));
  return x;
}

Message message_for(std::uint64_t seed, int index, int n) {
  Rng rng(derive_seed(seed, "message", static_cast<std::uint64_t>(index)));
  return random_message(n, rng);
}

std::vector<Message> messages_for(std::uint64_t seed, int first_index, int count, int n) {
  std::vector<Message> out;
  for (int i = 0; i < count; ++i) out.push_back(message_for(seed, first_index + i, n));
  return out;
}

std::vector<ExperimentRecord> run_evaluation(const EvaluationInput& input, const std::vector<std::string>& attacks,
                                             const AttackContext& ctx, int black_box_images) {
  if (!input.bundle) throw StateError("run_evaluation needs a model");
  require_same_shape(input.covers.shape(), input.watermarked.shape(), "run_evaluation");
  if (static_cast<int>(input.msgs.size()) != input.watermarked.n()) {
    throw DimensionError("run_evaluation: one message per image required");
  }
  AttackContext context = ctx;
  context.bundle = input.bundle;
  const PerceptualMetric perceptual;
  std::vector<ExperimentRecord> out;
  for (const auto& text : attacks) {
    const auto chain = parse_attack_chain(text);
    std::string id;
    bool black_box = false;
    for (const auto& s : chain) {
      id += (id.empty() ? "" : "+") + s.id();
      black_box = black_box || s.kind == AttackKind::black_q || s.kind == AttackKind::black_s;
    }
    const bool is_identity = chain.size() == 1 && chain[0].kind == AttackKind::identity;
    const int count = black_box ? std::min(black_box_images, input.watermarked.n()) : input.watermarked.n();
    if (count <= 0) continue;
    const Image xw = input.watermarked.samples(0, count);
    const Image xo = input.covers.samples(0, count);
    const std::vector<Message> msgs(input.msgs.begin(), input.msgs.begin() + count);
    const std::uint64_t seed = derive_seed(input.seed, id);
    const auto t0 = std::chrono::steady_clock::now();
    const Image attacked = apply_attack_chain(chain, xw, msgs, xo, context, seed);
    const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - t0);
    const auto bas = bit_accuracies(*input.bundle, attacked, msgs);
    for (int i = 0; i < count; ++i) {
      const Image a = is_identity ? xw.samples(i) : attacked.samples(i);
      const Image ref = is_identity ? xo.samples(i) : xw.samples(i);
      ExperimentRecord r;
      r.run_id = input.run_id;
      r.model_tag = input.model_tag;
      r.attack_id = id;
      r.bit_accuracy = bas[i];
      r.psnr = psnr(a, ref);
      r.ssim = ssim(a, ref);
      r.perceptual = perceptual(a, ref);
      r.wall_ms = ms.count() / count;
      r.seed = seed;
      out.push_back(std::move(r));
    }
  }
  return out;
}

std::vector<TheoremReport> verify_theorem_set(const ModelBundle& bundle, const Image& xw1, const Image& xw2,
                                              const RadiusConfig& config) {
  require_same_shape(xw1.shape(), xw2.shape(), "verify_theorem_set");
  std::vector<TheoremReport> out;
  for (int i = 0; i < xw1.n(); ++i) {
    RadiusConfig c = config;
    c.seed = derive_seed(config.seed, "image", i);
    out.push_back(verify_theorem(bundle, xw1.samples(i), xw2.samples(i), c));
  }
  return out;
}

void write_theorem_csv(const std::vector<TheoremReport>& reports, const std::filesystem::path& path) {
  std::ostringstream os;
  os << "image,alpha,delta,eta2_bound,samples,holds\n";
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const auto& r = reports[i];
    os << i << ',' << num(r.alpha) << ',' << num(r.delta) << ',' << num(r.eta2_bound) << ',' << r.samples << ','
       << (r.holds ? (*r.holds ? "true" : "false") : "undefined") << '\n';
  }
  write_text(path, os.str());
}

double mean_ba(const std::vector<ExperimentRecord>& records, const std::string& tag, const std::string& attack_id) {
  double s = 0;
  int n = 0;
  for (const auto& r : records)
    if (r.model_tag == tag && r.attack_id == attack_id) s += r.bit_accuracy, ++n;
  return n ? s / n : std::numeric_limits<double>::quiet_NaN();
}

double mean_psnr_of(const std::vector<ExperimentRecord>& records, const std::string& tag,
                    const std::string& attack_id) {
  double s = 0;
  int n = 0;
  for (const auto& r : records)
    if (r.model_tag == tag && r.attack_id == attack_id) s += r.psnr, ++n;
  return n ? s / n : std::numeric_limits<double>::quiet_NaN();
}

std::string table_text(const std::vector<ExperimentRecord>& records) {
  const auto tags = ordered_unique(records, &ExperimentRecord::model_tag);
  const auto ids = ordered_unique(records, &ExperimentRecord::attack_id);
  std::size_t first = std::string("attack").size();
  for (const auto& id : ids) first = std::max(first, id.size());
  std::vector<std::size_t> widths;
  for (const auto& t : tags) widths.push_back(std::max<std::size_t>(t.size(), 6));
  std::ostringstream os;
  os << std::left << std::setw(static_cast<int>(first)) << "attack";
  for (std::size_t j = 0; j < tags.size(); ++j) os << "  " << std::right << std::setw(static_cast<int>(widths[j])) << tags[j];
  os << '\n';
  for (const auto& id : ids) {
    os << std::left << std::setw(static_cast<int>(first)) << id;
    for (std::size_t j = 0; j < tags.size(); ++j)
      os << "  " << std::right << std::setw(static_cast<int>(widths[j])) << fixed(mean_ba(records, tags[j], id), 4);
    os << '\n';
  }
  return os.str();
}

std::string table_csv(const std::vector<ExperimentRecord>& records) {
  const auto tags = ordered_unique(records, &ExperimentRecord::model_tag);
  const auto ids = ordered_unique(records, &ExperimentRecord::attack_id);
  std::ostringstream os;
  os << "attack_id";
  for (const auto& t : tags) os << ',' << csv_field(t);
  os << '\n';
  for (const auto& id : ids) {
    os << csv_field(id);
    for (const auto& t : tags) {
      const double v = mean_ba(records, t, id);
      os << ',' << (std::isnan(v) ? std::string() : num(v));
    }
    os << '\n';
  }
  return os.str();
}

std::string sweep_svg(const std::vector<ExperimentRecord>& records, const std::string& kind) {
  const auto k = attack_kind_from_string(kind);
  if (!k) throw ParameterError("unknown attack kind '" + kind + "'");
  const char* key = sweep_key(*k);
  if (!key) throw ParameterError("attack kind '" + kind + "' has no sweep parameter");
  // tag -> x -> (sum, count)
  std::map<std::string, std::map<double, std::pair<double, int>>> series;
  std::vector<std::string> tags;
  for (const auto& r : records) {
    if (r.attack_id.find('+') != std::string::npos) continue;
    AttackSpec spec;
    try {
      spec = parse_attack(r.attack_id);
    } catch (const ParameterError&) {
      continue;
    }
    if (spec.kind != *k) continue;
    if (!series.contains(r.model_tag)) tags.push_back(r.model_tag);
    auto& cell = series[r.model_tag][spec.get(key)];
    cell.first += r.bit_accuracy;
    cell.second += 1;
  }
  double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin;
  for (const auto& [t, pts] : series)
    for (const auto& [x, v] : pts) xmin = std::min(xmin, x), xmax = std::max(xmax, x);
  if (series.empty()) xmin = 0, xmax = 1;
  if (xmax == xmin) xmax = xmin + 1;
  const double W = 480, H = 320, L = 60, R = 130, T = 30, B = 50;
  const auto px = [&](double x) { return L + (x - xmin) / (xmax - xmin) * (W - L - R); };
  const auto py = [&](double y) { return H - B - y * (H - T - B); };
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << L << "\" y=\"18\" font-size=\"13\">bit accuracy vs " << xml_escape(kind) << ' ' << key << "</text>\n";
  os << "<line x1=\"" << L << "\" y1=\"" << py(0) << "\" x2=\"" << W - R << "\" y2=\"" << py(0) << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << L << "\" y1=\"" << py(0) << "\" x2=\"" << L << "\" y2=\"" << py(1) << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double y = i / 4.0;
    os << "<text x=\"" << L - 6 << "\" y=\"" << py(y) + 4 << "\" text-anchor=\"end\">" << fixed(y, 2) << "</text>\n";
    const double x = xmin + (xmax - xmin) * i / 4.0;
    os << "<text x=\"" << px(x) << "\" y=\"" << H - B + 16 << "\" text-anchor=\"middle\">" << num(x) << "</text>\n";
  }
  os << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\">" << key << "</text>\n";
  for (std::size_t s = 0; s < tags.size(); ++s) {
    const char* color = kPalette[s % std::size(kPalette)];
    os << "<polyline class=\"series\" data-tag=\"" << xml_escape(tags[s]) << "\" fill=\"none\" stroke=\"" << color
       << "\" stroke-width=\"2\" points=\"";
    bool first = true;
    for (const auto& [x, v] : series[tags[s]]) {
      os << (first ? "" : " ") << px(x) << ',' << py(v.first / v.second);
      first = false;
    }
    os << "\"/>\n";
    const double ly = T + 16.0 * s;
    os << "<line x1=\"" << W - R + 10 << "\" y1=\"" << ly << "\" x2=\"" << W - R + 30 << "\" y2=\"" << ly
       << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << W - R + 35 << "\" y=\"" << ly + 4 << "\">" << xml_escape(tags[s]) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

std::string black_q_svg(const std::vector<ExperimentRecord>& records) {
  std::vector<std::string> tags;
  std::map<std::string, std::pair<double, int>> cells;
  for (const auto& r : records) {
    if (r.attack_id.rfind("black_q", 0) != 0 || r.attack_id.find('+') != std::string::npos) continue;
    if (!cells.contains(r.model_tag)) tags.push_back(r.model_tag);
    auto& c = cells[r.model_tag];
    c.first += r.psnr;
    c.second += 1;
  }
  double top = 10;
  for (const auto& [t, c] : cells) top = std::max(top, c.first / c.second);
  top = std::ceil(top / 10) * 10;
  const double W = 120.0 + 70.0 * std::max<std::size_t>(tags.size(), 1), H = 300, L = 50, T = 30, B = 50;
  const auto py = [&](double v) { return H - B - v / top * (H - T - B); };
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << L << "\" y=\"18\" font-size=\"13\">Black-Q attacked PSNR (dB)</text>\n";
  os << "<line x1=\"" << L << "\" y1=\"" << py(0) << "\" x2=\"" << W - 20 << "\" y2=\"" << py(0) << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double v = top * i / 4.0;
    os << "<text x=\"" << L - 6 << "\" y=\"" << py(v) + 4 << "\" text-anchor=\"end\">" << num(v) << "</text>\n";
  }
  for (std::size_t s = 0; s < tags.size(); ++s) {
    const double v = cells[tags[s]].first / cells[tags[s]].second;
    const double x = L + 20 + 70.0 * s;
    os << "<rect class=\"bar\" data-tag=\"" << xml_escape(tags[s]) << "\" x=\"" << x << "\" y=\"" << py(v)
       << "\" width=\"40\" height=\"" << py(0) - py(v) << "\" fill=\"" << kPalette[s % std::size(kPalette)] << "\"/>\n";
    os << "<text x=\"" << x + 20 << "\" y=\"" << py(v) - 4 << "\" text-anchor=\"middle\">" << fixed(v, 1) << "</text>\n";
    os << "<text x=\"" << x + 20 << "\" y=\"" << H - B + 16 << "\" text-anchor=\"middle\">" << xml_escape(tags[s]) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

ReportFiles write_report(const std::filesystem::path& run_dir) {
  const auto records_path = run_dir / "records.csv";
  if (!std::filesystem::exists(records_path)) throw IoError("no records.csv in " + run_dir.string());
  const auto records = read_records(records_path);
  const auto out_dir = run_dir / "report";
  std::filesystem::create_directories(out_dir);
  ReportFiles files;
  const auto emit = [&](const std::string& name, const std::string& text) {
    write_text(out_dir / name, text);
    files.written.push_back(out_dir / name);
  };
  emit("robustness.txt", table_text(records));
  emit("robustness.csv", table_csv(records));
  if (std::filesystem::exists(run_dir / "sweep.csv")) {
    const auto sweep = read_records(run_dir / "sweep.csv");
    emit("sweep.txt", table_text(sweep));
    emit("sweep.csv", table_csv(sweep));
    std::vector<std::string> kinds;
    for (const auto& r : sweep) {
      const std::string kind = r.attack_id.substr(0, r.attack_id.find(':'));
      if (r.attack_id.find('+') == std::string::npos && std::find(kinds.begin(), kinds.end(), kind) == kinds.end()) {
        const auto k = attack_kind_from_string(kind);
        if (k && sweep_key(*k)) kinds.push_back(kind);
      }
    }
    for (const auto& kind : kinds) emit("sweep_" + kind + ".svg", sweep_svg(sweep, kind));
  }
  const bool has_black_q = std::any_of(records.begin(), records.end(),
                                       [](const ExperimentRecord& r) { return r.attack_id.rfind("black_q", 0) == 0; });
  if (has_black_q) emit("black_q_psnr.svg", black_q_svg(records));
  return files;
}

}  // namespace advmark
