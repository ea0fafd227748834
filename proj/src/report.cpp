#include "cdsgen/report.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "cdsgen/errors.hpp"
#include "cdsgen/hashing.hpp"

namespace cdsgen {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::vector<std::vector<std::string>> read_tsv(const fs::path& path,
                                               const std::vector<std::string>& header) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::string line;
  std::getline(in, line);
  std::string expected;
  for (std::size_t i = 0; i < header.size(); ++i) expected += (i ? "\t" : "") + header[i];
  if (line != expected) throw SchemaError(path.string() + ": unexpected header '" + line + "'");
  std::vector<std::vector<std::string>> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, '\t')) fields.push_back(f);
    if (fields.size() != header.size()) {
      throw SchemaError(path.string() + ":" + std::to_string(lineno) + ": expected " +
                        std::to_string(header.size()) + " fields");
    }
    rows.push_back(std::move(fields));
  }
  return rows;
}

double to_double(const std::string& s, const fs::path& path) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw SchemaError(path.string() + ": bad number '" + s + "'");
  }
}

json summary_json(const Summary& s, std::size_t missing) {
  return {{"n", s.n},       {"missing", missing}, {"min", s.min},   {"q1", s.q1},
          {"median", s.median}, {"q3", s.q3},   {"max", s.max}, {"mean", s.mean},
          {"sd", s.sd}};
}

std::string cell(const json& v) {
  if (v.is_null()) return "";
  if (v.is_number_float()) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4g", v.get<double>());
    return buf;
  }
  return v.dump();
}

}  // namespace

std::vector<MeasureRow> read_measure_table(const fs::path& path) {
  std::vector<MeasureRow> out;
  for (const auto& f :
       read_tsv(path, {"corpus_tag", "age", "measure", "subsample_id", "value"})) {
    MeasureRow r;
    r.corpus_tag = f[0];
    r.age = static_cast<int>(to_double(f[1], path));
    r.measure = f[2];
    r.subsample_id = static_cast<std::size_t>(to_double(f[3], path));
    if (f[4] != "NA") r.value = to_double(f[4], path);
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<FitRow> read_fit_table(const fs::path& path) {
  std::vector<FitRow> out;
  for (const auto& f : read_tsv(path, {"corpus_tag", "measure", "a", "b", "c", "rss"})) {
    out.push_back({f[0], f[1], to_double(f[2], path), to_double(f[3], path),
                   to_double(f[4], path), to_double(f[5], path)});
  }
  return out;
}

std::vector<NoveltyRow> read_novelty_table(const fs::path& path) {
  std::vector<NoveltyRow> out;
  for (const auto& f : read_tsv(path, {"corpus_tag", "length", "proportion", "sd", "n"})) {
    out.push_back({f[0], static_cast<std::size_t>(to_double(f[1], path)), to_double(f[2], path),
                   to_double(f[3], path), static_cast<std::size_t>(to_double(f[4], path))});
  }
  return out;
}

json build_report(const std::vector<MeasureRow>& measures, const std::vector<FitRow>& fits,
                  const std::vector<NoveltyRow>& novelty, const std::vector<std::string>& tags,
                  const std::vector<std::string>& notes) {
  // measure -> age -> tag -> values
  std::map<std::string, std::map<int, std::map<std::string, std::vector<std::optional<double>>>>>
      grouped;
  for (const auto& r : measures) grouped[r.measure][r.age][r.corpus_tag].push_back(r.value);

  std::vector<std::string> order = kMeasureNames;
  for (const auto& [m, unused] : grouped) {
    if (std::find(order.begin(), order.end(), m) == order.end()) order.push_back(m);
  }

  json out;
  out["corpus_tags"] = tags;
  json measure_list = json::array();
  std::vector<std::string> all_notes = notes;
  for (const auto& m : order) {
    json rows = json::array();
    std::map<std::string, std::size_t> present_by_tag;
    auto it = grouped.find(m);
    if (it != grouped.end()) {
      for (const auto& [age, by_tag] : it->second) {
        json row = {{"age", age}};
        for (const auto& tag : tags) {
          auto t = by_tag.find(tag);
          if (t == by_tag.end()) {
            row[tag] = nullptr;
            continue;
          }
          std::vector<double> present;
          for (const auto& v : t->second) {
            if (v) present.push_back(*v);
          }
          present_by_tag[tag] += present.size();
          row[tag] = present.empty()
                         ? json(nullptr)
                         : summary_json(summarize(present), t->second.size() - present.size());
        }
        rows.push_back(row);
      }
    }
    json fit_list = json::object();
    for (const auto& f : fits) {
      if (f.measure == m) fit_list[f.corpus_tag] = {{"a", f.a}, {"b", f.b}, {"c", f.c}, {"rss", f.rss}};
    }
    for (const auto& tag : tags) {
      if (present_by_tag[tag] == 0) all_notes.push_back("no " + tag + " values for " + m);
    }
    measure_list.push_back({{"measure", m}, {"ages", rows}, {"fits", fit_list}});
  }
  out["measures"] = measure_list;

  json nov = json::array();
  for (const auto& r : novelty) {
    nov.push_back({{"corpus_tag", r.corpus_tag},
                   {"length", r.length},
                   {"proportion", r.proportion},
                   {"sd", r.sd},
                   {"n", r.n}});
  }
  out["novelty"] = nov;
  for (const auto& tag : tags) {
    const bool any = std::any_of(novelty.begin(), novelty.end(),
                                 [&](const NoveltyRow& r) { return r.corpus_tag == tag; });
    if (!any) all_notes.push_back("no " + tag + " novelty profile");
  }
  out["notes"] = all_notes;
  return out;
}

std::string render_markdown(const json& report) {
  std::ostringstream md;
  const auto tags = report.at("corpus_tags").get<std::vector<std::string>>();
  md << "# Corpus comparison report\n\n";
  if (report.contains("config_hash")) {
    md << "Config hash `" << report["config_hash"].get<std::string>() << "`, master seed "
       << report["master_seed"].dump() << ".\n\n";
  }
  const auto& notes = report.at("notes");
  if (!notes.empty()) {
    md << "## Notes\n\n";
    for (const auto& n : notes) md << "- " << n.get<std::string>() << '\n';
    md << '\n';
  }
  static const char* kStats[] = {"n", "missing", "min", "q1", "median", "q3", "max", "mean", "sd"};
  for (const auto& m : report.at("measures")) {
    md << "## " << m.at("measure").get<std::string>() << "\n\n";
    if (m.at("ages").empty()) {
      md << "No values.\n\n";
      continue;
    }
    md << "| age | corpus |";
    for (const char* s : kStats) md << ' ' << s << " |";
    md << "\n|---|---|";
    for (std::size_t i = 0; i < std::size(kStats); ++i) md << "---|";
    md << '\n';
    for (const auto& row : m.at("ages")) {
      for (const auto& tag : tags) {
        if (!row.contains(tag) || row.at(tag).is_null()) continue;
        md << "| " << row.at("age").get<int>() << " | " << tag << " |";
        for (const char* s : kStats) md << ' ' << cell(row.at(tag).at(s)) << " |";
        md << '\n';
      }
    }
    md << '\n';
    if (!m.at("fits").empty()) {
      md << "Quadratic fits (a·age² + b·age + c):\n\n| corpus | a | b | c | rss |\n|---|---|---|---|---|\n";
      for (const auto& [tag, f] : m.at("fits").items()) {
        md << "| " << tag << " | " << cell(f.at("a")) << " | " << cell(f.at("b")) << " | "
           << cell(f.at("c")) << " | " << cell(f.at("rss")) << " |\n";
      }
      md << '\n';
    }
  }
  md << "## Novelty by utterance length\n\n";
  if (report.at("novelty").empty()) {
    md << "No values.\n";
  } else {
    md << "| corpus | length | proportion | sd | n |\n|---|---|---|---|---|\n";
    for (const auto& r : report.at("novelty")) {
      md << "| " << r.at("corpus_tag").get<std::string>() << " | " << r.at("length").get<std::size_t>()
         << " | " << cell(r.at("proportion")) << " | " << cell(r.at("sd")) << " | "
         << r.at("n").get<std::size_t>() << " |\n";
    }
  }
  return md.str();
}

std::string render_svg(const json& report, const std::string& measure) {
  const auto tags = report.at("corpus_tags").get<std::vector<std::string>>();
  const json* m = nullptr;
  for (const auto& x : report.at("measures")) {
    if (x.at("measure") == measure) m = &x;
  }
  if (!m) throw InputError("no measure " + measure + " in the report");

  constexpr double W = 640, H = 400, L = 60, R = 20, T = 30, B = 50;
  double x0 = 0, x1 = 84, y0 = INFINITY, y1 = -INFINITY;
  for (const auto& row : m->at("ages")) {
    for (const auto& tag : tags) {
      if (!row.contains(tag) || row.at(tag).is_null()) continue;
      y0 = std::min(y0, row.at(tag).at("min").get<double>());
      y1 = std::max(y1, row.at(tag).at("max").get<double>());
      x1 = std::max(x1, row.at("age").get<double>());
    }
  }
  if (!std::isfinite(y0)) y0 = 0, y1 = 1;
  if (y1 - y0 < 1e-12) y0 -= 0.5, y1 += 0.5;
  const double pad = 0.05 * (y1 - y0);
  y0 -= pad;
  y1 += pad;
  auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
  auto py = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - T - B); };
  auto num = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.1f", v);
    return std::string(buf);
  };
  static const char* kColors[] = {"#c0392b", "#2c6fbb", "#27ae60", "#8e44ad"};

  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
    << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<text x=\"" << W / 2 << "\" y=\"18\" text-anchor=\"middle\" font-size=\"14\">" << measure
    << "</text>\n";
  s << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
    << "\" stroke=\"black\"/>\n";
  s << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B
    << "\" stroke=\"black\"/>\n";
  for (double age = 0; age <= x1; age += 12) {
    s << "<text x=\"" << num(px(age)) << "\" y=\"" << H - B + 16 << "\" text-anchor=\"middle\">"
      << age << "</text>\n";
  }
  s << "<text x=\"" << num((L + W - R) / 2) << "\" y=\"" << H - 10
    << "\" text-anchor=\"middle\">age (months)</text>\n";
  for (int i = 0; i <= 4; ++i) {
    const double v = y0 + (y1 - y0) * i / 4.0;
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3g", v);
    s << "<text x=\"" << L - 6 << "\" y=\"" << num(py(v) + 4) << "\" text-anchor=\"end\">" << buf
      << "</text>\n";
  }
  for (std::size_t t = 0; t < tags.size(); ++t) {
    const char* color = kColors[t % std::size(kColors)];
    const double shift = (static_cast<double>(t) - 0.5 * (tags.size() - 1)) * 4.0;
    for (const auto& row : m->at("ages")) {
      if (!row.contains(tags[t]) || row.at(tags[t]).is_null()) continue;
      const auto& st = row.at(tags[t]);
      const double x = px(row.at("age").get<double>()) + shift;
      s << "<line x1=\"" << num(x) << "\" y1=\"" << num(py(st.at("min"))) << "\" x2=\"" << num(x)
        << "\" y2=\"" << num(py(st.at("max"))) << "\" stroke=\"" << color << "\"/>\n";
      s << "<rect x=\"" << num(x - 2.5) << "\" y=\"" << num(py(st.at("q3"))) << "\" width=\"5\" height=\""
        << num(py(st.at("q1")) - py(st.at("q3"))) << "\" fill=\"" << color << "\" opacity=\"0.5\"/>\n";
      s << "<circle cx=\"" << num(x) << "\" cy=\"" << num(py(st.at("median"))) << "\" r=\"2.5\" fill=\""
        << color << "\"/>\n";
    }
    if (m->at("fits").contains(tags[t])) {
      const auto& f = m->at("fits").at(tags[t]);
      const double a = f.at("a"), b = f.at("b"), c = f.at("c");
      s << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-dasharray=\"5,4\" points=\"";
      for (int i = 0; i <= 60; ++i) {
        const double x = x0 + (x1 - x0) * i / 60.0;
        const double y = std::clamp((a * x + b) * x + c, y0, y1);
        s << num(px(x)) << ',' << num(py(y)) << ' ';
      }
      s << "\"/>\n";
    }
    s << "<text x=\"" << W - R - 80 << "\" y=\"" << T + 14 * t << "\" fill=\"" << color << "\">"
      << tags[t] << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

std::vector<fs::path> write_report(const ArtifactPaths& a, const PipelineConfig& config, bool svg) {
  for (const auto& p : {a.analysis_manifest(), a.measures(), a.fits(), a.novelty()}) {
    if (!fs::exists(p)) {
      throw MissingDependencyError(p.string() + " not found (run `cdsgen analyze` first)");
    }
  }
  const auto manifest = read_json(a.analysis_manifest());
  verify_recorded_output(a.analysis_manifest(), "measures", a.measures());
  verify_recorded_output(a.analysis_manifest(), "fits", a.fits());
  verify_recorded_output(a.analysis_manifest(), "novelty", a.novelty());

  // Every merged artifact must describe the same corpora.
  const auto& corpora = manifest.at("corpora");
  auto check_corpus = [&](const std::string& tag, const fs::path& stage_manifest,
                          const std::string& key) {
    if (!fs::exists(stage_manifest)) {
      throw MissingDependencyError(stage_manifest.string() + " not found; cannot confirm the " +
                                   tag + " corpus the analysis used");
    }
    const auto recorded = read_json(stage_manifest).at("outputs").at(key).get<std::string>();
    if (corpora.at(tag).get<std::string>() != recorded) {
      throw SchemaError("refusing to merge: the analysis used a different " + tag +
                        " corpus (" + corpora.at(tag).get<std::string>() + ") than " +
                        stage_manifest.string() + " records (" + recorded + ")");
    }
  };
  check_corpus("real", a.prepare_manifest(), "normalized");
  std::vector<std::string> tags = {"real"};
  if (!corpora.at("generated").is_null()) {
    check_corpus("generated", a.generate_manifest(), "corpus");
    tags.push_back("generated");
  }

  auto notes = manifest.value("notes", std::vector<std::string>{});
  json report = build_report(read_measure_table(a.measures()), read_fit_table(a.fits()),
                             read_novelty_table(a.novelty()), tags, notes);
  report["config_hash"] = config.hash();
  report["master_seed"] = config.seed;
  report["analysis_config_hash"] = manifest.at("config_hash");
  report["corpora"] = corpora;

  std::vector<fs::path> written;
  fs::create_directories(a.report_dir());
  auto write = [&](const fs::path& p, const std::string& content) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw IoError("cannot write " + p.string());
    out << content;
    written.push_back(p);
  };
  write(a.report_dir() / "report.json", report.dump(2) + "\n");
  write(a.report_dir() / "report.md", render_markdown(report));
  if (svg) {
    for (const auto& m : report.at("measures")) {
      const auto name = m.at("measure").get<std::string>();
      write(a.report_dir() / (name + ".svg"), render_svg(report, name));
    }
  }
  return written;
}

}  // namespace cdsgen
