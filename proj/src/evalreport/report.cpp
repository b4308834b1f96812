/* Copyright 2026 The flowprobe Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 *
 */

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "flowprobe/error.hpp"
#include "flowprobe/evalreport.hpp"
#include "flowprobe/kvtext.hpp"

namespace flowprobe {

namespace {

constexpr int kCell = 28;
constexpr int kMarginLeft = 56;
constexpr int kMarginTop = 40;
constexpr int kMarginBottom = 40;

std::string exact(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// Linear ramp from deep violet to yellow.
std::string color_for(double u) {
  u = std::clamp(u, 0.0, 1.0);
  const int r = static_cast<int>(68 + u * (253 - 68) + 0.5);
  const int g = static_cast<int>(1 + u * (231 - 1) + 0.5);
  const int b = static_cast<int>(84 + u * (37 - 84) + 0.5);
  char buf[8];
  std::snprintf(buf, sizeof(buf), "#%02x%02x%02x", r, g, b);
  return buf;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) out.push_back(field);
  return out;
}

}  // namespace

void write_profile_csv(std::ostream& os, std::span<const AttributionProfile* const> profiles) {
  os << "metric,domain,layer,t_bin,value,n\n";
  for (const AttributionProfile* p : profiles) {
    for (int l = 0; l <= p->layers(); ++l)
      for (int b = 0; b < p->bins(); ++b) {
        os << metric_name(p->metric) << ',' << profile_domain_name(p->domain) << ',' << l << ','
           << exact(p->t_bins[static_cast<std::size_t>(b)]) << ','
           << exact(p->values.at(static_cast<std::size_t>(l), static_cast<std::size_t>(b))) << ','
           << p->n << '\n';
      }
  }
  if (!os) throw IoError("failed writing profile CSV");
}

std::vector<AttributionProfile> read_profile_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != "metric,domain,layer,t_bin,value,n") {
    throw IoError("profile CSV header must be 'metric,domain,layer,t_bin,value,n'");
  }
  struct Cells {
    Metric metric;
    ProfileDomain domain;
    int n = 0;
    int max_layer = 0;
    std::vector<double> bins;
    std::map<std::pair<int, std::size_t>, double> values;
  };
  std::vector<Cells> groups;
  int lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != 6) throw IoError("profile CSV line " + std::to_string(lineno) + ": expected 6 fields");
    const Metric m = parse_metric(f[0]);
    const ProfileDomain d = parse_profile_domain(f[1]);
    auto it = std::find_if(groups.begin(), groups.end(),
                           [&](const Cells& c) { return c.metric == m && c.domain == d; });
    if (it == groups.end()) {
      groups.push_back(Cells{m, d, 0, 0, {}, {}});
      it = std::prev(groups.end());
    }
    const int layer = static_cast<int>(kv::to_int("layer", f[2]));
    const double t = kv::to_double("t_bin", f[3]);
    auto bin = std::find(it->bins.begin(), it->bins.end(), t);
    if (bin == it->bins.end()) {
      it->bins.push_back(t);
      bin = std::prev(it->bins.end());
    }
    it->values[{layer, static_cast<std::size_t>(bin - it->bins.begin())}] = kv::to_double("value", f[4]);
    it->n = static_cast<int>(kv::to_int("n", f[5]));
    it->max_layer = std::max(it->max_layer, layer);
  }
  std::vector<AttributionProfile> out;
  for (const Cells& c : groups) {
    AttributionProfile p;
    p.metric = c.metric;
    p.domain = c.domain;
    p.t_bins = c.bins;
    p.n = c.n;
    p.values = Tensor({static_cast<std::size_t>(c.max_layer) + 1, c.bins.size()});
    if (c.values.size() != p.values.numel()) throw IoError("profile CSV grid is incomplete");
    for (const auto& [key, v] : c.values) p.values.at(static_cast<std::size_t>(key.first), key.second) = v;
    out.push_back(std::move(p));
  }
  return out;
}

std::string render_heatmap_svg(const AttributionProfile& p) {
  const int rows = p.layers() + 1, cols = p.bins();
  double lo = p.values.empty() ? 0.0 : p.values[0], hi = lo;
  for (double v : p.values.data()) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const int width = kMarginLeft + cols * kCell + 16;
  const int height = kMarginTop + rows * kCell + kMarginBottom;
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  svg << "<text x=\"" << kMarginLeft << "\" y=\"20\" font-size=\"13\">" << metric_name(p.metric) << " / "
      << profile_domain_name(p.domain) << " (n=" << p.n << ", range " << exact(lo) << " .. " << exact(hi)
      << ")</text>\n";
  // Deepest layer on top, diffusion time left to right.
  for (int l = 0; l < rows; ++l) {
    const int y = kMarginTop + (rows - 1 - l) * kCell;
    svg << "<text x=\"" << kMarginLeft - 6 << "\" y=\"" << y + kCell / 2 + 4
        << "\" text-anchor=\"end\">L" << l << "</text>\n";
    for (int b = 0; b < cols; ++b) {
      const double v = p.values.at(static_cast<std::size_t>(l), static_cast<std::size_t>(b));
      const double u = hi > lo ? (v - lo) / (hi - lo) : 0.0;
      svg << "<rect class=\"cell\" x=\"" << kMarginLeft + b * kCell << "\" y=\"" << y << "\" width=\""
          << kCell << "\" height=\"" << kCell << "\" fill=\"" << color_for(u) << "\"/>\n";
    }
  }
  for (int b = 0; b < cols; ++b) {
    char label[16];
    std::snprintf(label, sizeof(label), "%.2f", p.t_bins[static_cast<std::size_t>(b)]);
    svg << "<text x=\"" << kMarginLeft + b * kCell + kCell / 2 << "\" y=\""
        << kMarginTop + rows * kCell + 14 << "\" text-anchor=\"middle\">" << label << "</text>\n";
  }
  svg << "<text x=\"" << kMarginLeft + cols * kCell / 2 << "\" y=\"" << height - 8
      << "\" text-anchor=\"middle\">diffusion time t</text>\n";
  svg << "</svg>\n";
  return svg.str();
}

void emit_heatmap(const AttributionProfile& profile, const std::filesystem::path& stem) {
  auto csv_path = stem;
  csv_path += ".csv";
  auto svg_path = stem;
  svg_path += ".svg";
  {
    std::ofstream os(csv_path, std::ios::binary);
    if (!os) throw IoError("cannot write " + csv_path.string());
    const AttributionProfile* one[] = {&profile};
    write_profile_csv(os, one);
  }
  std::ofstream os(svg_path, std::ios::binary);
  if (!os) throw IoError("cannot write " + svg_path.string());
  os << render_heatmap_svg(profile);
  if (!os) throw IoError("failed writing " + svg_path.string());
}

void write_summary_csv(const std::filesystem::path& path, std::span<const SummaryRow> rows) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path.string());
  os << "strategy,domain,ffd,steps_to_threshold,seed\n";
  for (const SummaryRow& r : rows) {
    os << r.strategy << ',' << r.domain << ',' << exact(r.ffd) << ','
       << (r.steps_to_threshold ? std::to_string(*r.steps_to_threshold) : std::string("none")) << ','
       << r.seed << '\n';
  }
  if (!os) throw IoError("failed writing " + path.string());
}

}  // namespace flowprobe
