#include "opushield/report.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <sstream>
#include <tuple>

#include "opushield/errors.hpp"

namespace opushield {

RunRecord accuracy_record(std::string figure, std::string variant, std::string attack,
                          const AccuracyCurve& curve) {
  RunRecord r;
  r.figure = std::move(figure);
  r.variant = std::move(variant);
  r.attack = std::move(attack);
  r.x_name = "epsilon";
  r.y_name = "accuracy";
  r.samples = curve.samples;
  for (std::size_t i = 0; i < curve.epsilons.size(); ++i) r.points.push_back({curve.epsilons[i], curve.accuracy[i]});
  return r;
}

RunRecord csr_record(std::string figure, std::string variant, std::string attack, const CsrCurve& curve) {
  RunRecord r;
  r.figure = std::move(figure);
  r.variant = std::move(variant);
  r.attack = std::move(attack);
  r.x_name = "queries";
  r.y_name = "csr";
  r.samples = curve.samples();
  r.points.push_back({0.0, curve.at(0)});
  for (const auto& [q, rate] : curve.steps()) {
    if (q > 0) r.points.push_back({static_cast<double>(q), rate});
  }
  if (r.points.back().x < static_cast<double>(curve.max_queries())) {
    r.points.push_back({static_cast<double>(curve.max_queries()), curve.final_rate()});
  }
  return r;
}

std::string format_number(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

namespace {

constexpr const char* kHeader = "figure,variant,attack,x_name,x,y_name,value,samples";

void check_field(const std::string& s, const char* what) {
  if (s.empty() || s.find_first_of(",\n\r\"") != std::string::npos) {
    throw InputError(std::string(what) + " '" + s + "' is empty or holds a CSV delimiter");
  }
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(sep, start);
    out.push_back(line.substr(start, pos - start));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return out;
}

template <class T>
bool parse_value(const std::string& s, T& out) {
  const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return res.ec == std::errc() && res.ptr == s.data() + s.size();
}

}  // namespace

std::string format_csv(const std::vector<RunRecord>& records) {
  if (records.empty()) throw InputError("no records to report");
  const auto& first = records.front();
  std::string out = std::string(kHeader) + "\n";
  for (const auto& r : records) {
    if (r.x_name != first.x_name || r.y_name != first.y_name) {
      throw InputError("cannot mix " + first.y_name + "-vs-" + first.x_name + " records with " + r.y_name +
                       "-vs-" + r.x_name + " records in one table");
    }
    check_field(r.figure, "figure");
    check_field(r.variant, "variant");
    check_field(r.attack, "attack");
    check_field(r.x_name, "x_name");
    check_field(r.y_name, "y_name");
    for (const auto& p : r.points) {
      out += r.figure + "," + r.variant + "," + r.attack + "," + r.x_name + "," + format_number(p.x) + "," +
             r.y_name + "," + format_number(p.value) + "," + std::to_string(r.samples) + "\n";
    }
  }
  return out;
}

std::vector<RunRecord> parse_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::uint64_t offset = 0;
  if (!std::getline(in, line) || line != kHeader) throw ParseError("missing or unexpected CSV header", 0);
  offset += line.size() + 1;
  std::vector<RunRecord> out;
  while (std::getline(in, line)) {
    if (line.empty()) {
      offset += 1;
      continue;
    }
    const auto f = split(line, ',');
    if (f.size() != 8) throw ParseError("expected 8 CSV fields, got " + std::to_string(f.size()), offset);
    CurvePoint p;
    std::size_t samples = 0;
    if (!parse_value(f[4], p.x) || !parse_value(f[6], p.value) || !parse_value(f[7], samples)) {
      throw ParseError("malformed number in CSV row", offset);
    }
    const bool same = !out.empty() && std::tie(out.back().figure, out.back().variant, out.back().attack) ==
                                          std::tie(f[0], f[1], f[2]);
    if (!same) {
      RunRecord r;
      r.figure = f[0];
      r.variant = f[1];
      r.attack = f[2];
      r.x_name = f[3];
      r.y_name = f[5];
      r.samples = samples;
      out.push_back(std::move(r));
    } else if (out.back().x_name != f[3] || out.back().y_name != f[5] || out.back().samples != samples) {
      throw ParseError("row disagrees with the rest of its curve", offset);
    }
    out.back().points.push_back(p);
    offset += line.size() + 1;
  }
  if (out.empty()) throw ParseError("CSV holds no rows", offset);
  return out;
}

namespace {

std::string fixed(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string tick_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

std::string escape_xml(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

std::string render_svg(const std::vector<RunRecord>& records, const std::string& title) {
  if (records.empty()) throw InputError("no records to plot");
  for (const auto& r : records) {
    if (r.x_name != records.front().x_name || r.y_name != records.front().y_name) {
      throw InputError("cannot plot records with different axes together");
    }
  }
  constexpr double W = 720, H = 440, left = 70, right = 190, top = 40, bottom = 60;
  constexpr const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                     "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  double x0 = 0.0, x1 = 0.0;
  bool any = false;
  for (const auto& r : records) {
    for (const auto& p : r.points) {
      x0 = any ? std::min(x0, p.x) : p.x;
      x1 = any ? std::max(x1, p.x) : p.x;
      any = true;
    }
  }
  if (!any) throw InputError("records hold no points");
  if (x1 == x0) x1 = x0 + 1.0;
  const double pw = W - left - right, ph = H - top - bottom;
  auto sx = [&](double x) { return left + (x - x0) / (x1 - x0) * pw; };
  auto sy = [&](double y) { return top + (1.0 - std::clamp(y, 0.0, 1.0)) * ph; };

  std::string s;
  s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fixed(W) + "\" height=\"" + fixed(H) +
       "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s += "<text x=\"" + fixed(left + pw / 2) + "\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">" +
       escape_xml(title) + "</text>\n";
  for (int i = 0; i <= 5; ++i) {
    const double fy = i / 5.0, fx = x0 + (x1 - x0) * i / 5.0;
    s += "<line x1=\"" + fixed(left) + "\" y1=\"" + fixed(sy(fy)) + "\" x2=\"" + fixed(left + pw) + "\" y2=\"" +
         fixed(sy(fy)) + "\" stroke=\"#e0e0e0\"/>\n";
    s += "<text x=\"" + fixed(left - 6) + "\" y=\"" + fixed(sy(fy) + 4) + "\" text-anchor=\"end\">" +
         tick_label(fy) + "</text>\n";
    s += "<text x=\"" + fixed(sx(fx)) + "\" y=\"" + fixed(top + ph + 18) + "\" text-anchor=\"middle\">" +
         tick_label(fx) + "</text>\n";
  }
  s += "<rect x=\"" + fixed(left) + "\" y=\"" + fixed(top) + "\" width=\"" + fixed(pw) + "\" height=\"" +
       fixed(ph) + "\" fill=\"none\" stroke=\"black\"/>\n";
  s += "<text x=\"" + fixed(left + pw / 2) + "\" y=\"" + fixed(H - 18) + "\" text-anchor=\"middle\">" +
       escape_xml(records.front().x_name) + "</text>\n";
  s += "<text transform=\"translate(18," + fixed(top + ph / 2) + ") rotate(-90)\" text-anchor=\"middle\">" +
       escape_xml(records.front().y_name) + "</text>\n";

  const bool steps = records.front().y_name == "csr";
  for (std::size_t k = 0; k < records.size(); ++k) {
    const auto& r = records[k];
    const std::string color = palette[k % std::size(palette)];
    std::string pts;
    for (std::size_t i = 0; i < r.points.size(); ++i) {
      const auto& p = r.points[i];
      if (steps && i > 0) pts += fixed(sx(p.x)) + "," + fixed(sy(r.points[i - 1].value)) + " ";
      pts += fixed(sx(p.x)) + "," + fixed(sy(p.value)) + " ";
    }
    if (!pts.empty()) pts.pop_back();
    s += "<polyline fill=\"none\" stroke=\"" + color + "\" stroke-width=\"2\" points=\"" + pts + "\"/>\n";
    if (!steps) {
      for (const auto& p : r.points) {
        s += "<circle cx=\"" + fixed(sx(p.x)) + "\" cy=\"" + fixed(sy(p.value)) + "\" r=\"3\" fill=\"" + color +
             "\"/>\n";
      }
    }
    const double ly = top + 14 + 18.0 * static_cast<double>(k);
    s += "<line x1=\"" + fixed(W - right + 12) + "\" y1=\"" + fixed(ly - 4) + "\" x2=\"" + fixed(W - right + 32) +
         "\" y2=\"" + fixed(ly - 4) + "\" stroke=\"" + color + "\" stroke-width=\"2\"/>\n";
    s += "<text x=\"" + fixed(W - right + 38) + "\" y=\"" + fixed(ly) + "\">" +
         escape_xml(r.variant + " " + r.attack) + "</text>\n";
  }
  s += "</svg>\n";
  return s;
}

std::string format_whitebox_samples(const WhiteBoxRun& run) {
  std::string out = "epsilon,index,label,predicted_before,predicted_after,linf,success\n";
  for (std::size_t e = 0; e < run.records.size(); ++e) {
    for (const auto& r : run.records[e]) {
      out += format_number(run.curve.epsilons[e]) + "," + std::to_string(r.index) + "," + std::to_string(r.label) +
             "," + std::to_string(r.predicted_before) + "," + std::to_string(r.predicted_after) + "," +
             format_number(r.linf) + "," + (r.success ? "1" : "0") + "\n";
    }
  }
  return out;
}

std::string format_blackbox_samples(const BlackBoxRun& run) {
  std::string out = "index,label,first_success,queries,stop\n";
  for (const auto& r : run.samples) {
    out += std::to_string(r.index) + "," + std::to_string(r.label) + "," +
           (r.first_success ? std::to_string(*r.first_success) : std::string("FAIL")) + "," +
           std::to_string(r.queries) + "," + to_string(r.reason) + "\n";
  }
  return out;
}

}  // namespace opushield
