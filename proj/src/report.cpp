#include "bcp/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

namespace bcp::report {

namespace {

std::string f2(double v, const char* fmt = "%.2f") {
  char buf[48];
  std::snprintf(buf, sizeof(buf), fmt, v);
  return buf;
}

std::string escape(const std::string& s) {
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

const char* kPalette[] = {"#c0392b", "#2471a3", "#229954", "#7d3c98", "#d68910", "#566573"};

// Round axis bounds outward to a "nice" step.
struct Scale {
  double lo, hi, step;
};

Scale nice_scale(double lo, double hi, int ticks) {
  if (!(hi > lo)) {
    const double pad = std::abs(lo) > 0 ? std::abs(lo) * 0.1 : 1.0;
    lo -= pad;
    hi += pad;
  }
  const double raw = (hi - lo) / ticks;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  double step = mag;
  for (double m : {1.0, 2.0, 2.5, 5.0, 10.0}) {
    if (m * mag >= raw) {
      step = m * mag;
      break;
    }
  }
  return {std::floor(lo / step) * step, std::ceil(hi / step) * step, step};
}

std::string tick_text(double v, double step) {
  if (step >= 1.0) return f2(v, "%.0f");
  if (step >= 0.1) return f2(v, "%.1f");
  return f2(v, "%.2f");
}

}  // namespace

std::vector<Chart> build_charts(const std::vector<harness::CsvRow>& rows) {
  std::string hash;
  bool any_ok = false;
  for (const auto& r : rows) {
    if (hash.empty()) hash = r.config_hash();
    if (r.config_hash() != hash) {
      throw InputError("rows from different configs (" + hash + " vs " + r.config_hash() + ") cannot share a report");
    }
    any_ok = any_ok || r.error.empty();
  }
  if (!any_ok) throw InputError("report needs at least one successful data row");

  std::vector<std::string> order;
  std::map<std::string, std::vector<const harness::CsvRow*>> by_sweep;
  for (const auto& r : rows) {
    const std::string s = r.sweep().empty() ? "results" : r.sweep();
    if (!by_sweep.count(s)) order.push_back(s);
    by_sweep[s].push_back(&r);
  }

  std::vector<Chart> charts;
  for (const auto& name : order) {
    Chart c;
    c.sweep = name;
    const std::string prefix = name.substr(0, name.find('-'));
    c.categorical = prefix == "type" || prefix == "attack";
    c.x_title = prefix == "size" ? "patch size N (pixels)"
                : prefix == "type" ? "trigger type"
                : prefix == "attack" ? "attack mode"
                                     : "poisoned fraction of target-action frames";

    struct Acc {
      std::string series, label;
      double x;
      std::vector<double> reward, control, nontarget, acc;
    };
    std::vector<Acc> accs;
    for (const harness::CsvRow* r : by_sweep[name]) {
      if (!r->error.empty()) {
        ++c.failed_rows;
        continue;
      }
      std::string series, label;
      double x = 0.0;
      if (prefix == "type") {
        series = "trigger";
        label = r->patch_type;
      } else if (prefix == "attack") {
        series = r->patch_type;
        label = r->attack_mode;
      } else if (prefix == "size") {
        series = r->patch_type;
        x = r->patch_size;
        label = std::to_string(r->patch_size);
      } else {
        series = r->patch_type;
        x = r->poison_fraction;
        label = f2(x, "%g");
      }
      auto it = std::find_if(accs.begin(), accs.end(),
                             [&](const Acc& a) { return a.series == series && a.label == label; });
      if (it == accs.end()) {
        accs.push_back({series, label, x, {}, {}, {}, {}});
        it = accs.end() - 1;
      }
      it->reward.push_back(r->mean_reward);
      it->control.push_back(r->control_rate);
      it->nontarget.push_back(r->control_rate_nontarget);
      it->acc.push_back(r->train_holdout_acc);
    }
    if (c.categorical) {
      for (std::size_t i = 0; i < accs.size(); ++i) accs[i].x = static_cast<double>(i);
    } else {
      std::stable_sort(accs.begin(), accs.end(), [](const Acc& a, const Acc& b) {
        return a.series != b.series ? a.series < b.series : a.x < b.x;
      });
    }
    for (const Acc& a : accs) {
      Point p;
      p.series = a.series;
      p.label = a.label;
      p.x = a.x;
      p.n = static_cast<int>(a.reward.size());
      std::tie(p.reward, p.reward_se) = harness::mean_se(a.reward);
      std::tie(p.control, p.control_se) = harness::mean_se(a.control);
      p.control_nontarget = harness::mean_se(a.nontarget).first;
      p.holdout_acc = harness::mean_se(a.acc).first;
      c.points.push_back(p);
    }
    charts.push_back(std::move(c));
  }
  return charts;
}

std::string render_svg(const Chart& chart) {
  const double W = 960, H = 420, panel_w = 400, panel_h = 280, top = 70, left0 = 70, gap = 80;
  std::ostringstream s;
  s << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
    << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" << W << "\" height=\"" << H
    << "\" viewBox=\"0 0 " << W << ' ' << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
    << "<rect x=\"0\" y=\"0\" width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n"
    << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">" << escape(chart.sweep)
    << "</text>\n";

  std::vector<std::string> series;
  for (const auto& p : chart.points) {
    if (std::find(series.begin(), series.end(), p.series) == series.end()) series.push_back(p.series);
  }

  // x extent
  double xlo = 0, xhi = 1;
  if (!chart.points.empty()) {
    xlo = xhi = chart.points.front().x;
    for (const auto& p : chart.points) {
      xlo = std::min(xlo, p.x);
      xhi = std::max(xhi, p.x);
    }
  }
  if (chart.categorical) {
    xlo = -0.5;
    xhi = static_cast<double>(chart.points.size()) - 0.5;
  }
  const Scale xs = chart.categorical ? Scale{xlo, xhi, 1.0} : nice_scale(xlo, xhi, 5);

  for (int panel = 0; panel < 2; ++panel) {
    const double left = left0 + panel * (panel_w + gap);
    const bool rew = panel == 0;
    double ylo = rew ? 0.0 : 0.0, yhi = rew ? 1.0 : 1.0;
    if (rew && !chart.points.empty()) {
      ylo = yhi = chart.points.front().reward;
      for (const auto& p : chart.points) {
        ylo = std::min({ylo, p.reward - p.reward_se, 0.0});
        yhi = std::max(yhi, p.reward + p.reward_se);
      }
    }
    const Scale ys = rew ? nice_scale(ylo, yhi, 5) : Scale{0.0, 1.0, 0.2};
    auto px = [&](double x) { return left + (x - xs.lo) / (xs.hi - xs.lo) * panel_w; };
    auto py = [&](double y) { return top + panel_h - (y - ys.lo) / (ys.hi - ys.lo) * panel_h; };

    s << "<g>\n<text x=\"" << f2(left + panel_w / 2) << "\" y=\"" << f2(top - 12)
      << "\" text-anchor=\"middle\" font-size=\"14\">" << (rew ? "mean episode reward" : "backdoor control rate")
      << "</text>\n";
    // gridlines and y ticks
    const int ny = static_cast<int>(std::lround((ys.hi - ys.lo) / ys.step));
    for (int i = 0; i <= ny; ++i) {
      const double v = ys.lo + i * ys.step;
      s << "<line x1=\"" << f2(left) << "\" y1=\"" << f2(py(v)) << "\" x2=\"" << f2(left + panel_w) << "\" y2=\""
        << f2(py(v)) << "\" stroke=\"#dddddd\"/>\n"
        << "<text x=\"" << f2(left - 6) << "\" y=\"" << f2(py(v) + 4) << "\" text-anchor=\"end\">"
        << tick_text(v, ys.step) << "</text>\n";
    }
    // x ticks
    if (chart.categorical) {
      for (const auto& p : chart.points) {
        s << "<text x=\"" << f2(px(p.x)) << "\" y=\"" << f2(top + panel_h + 18) << "\" text-anchor=\"middle\">"
          << escape(p.label) << "</text>\n";
      }
    } else {
      const int nx = static_cast<int>(std::lround((xs.hi - xs.lo) / xs.step));
      for (int i = 0; i <= nx; ++i) {
        const double v = xs.lo + i * xs.step;
        s << "<line x1=\"" << f2(px(v)) << "\" y1=\"" << f2(top + panel_h) << "\" x2=\"" << f2(px(v)) << "\" y2=\""
          << f2(top + panel_h + 5) << "\" stroke=\"black\"/>\n"
          << "<text x=\"" << f2(px(v)) << "\" y=\"" << f2(top + panel_h + 18) << "\" text-anchor=\"middle\">"
          << tick_text(v, xs.step) << "</text>\n";
      }
    }
    // axes
    s << "<line x1=\"" << f2(left) << "\" y1=\"" << f2(top) << "\" x2=\"" << f2(left) << "\" y2=\""
      << f2(top + panel_h) << "\" stroke=\"black\"/>\n"
      << "<line x1=\"" << f2(left) << "\" y1=\"" << f2(top + panel_h) << "\" x2=\"" << f2(left + panel_w)
      << "\" y2=\"" << f2(top + panel_h) << "\" stroke=\"black\"/>\n"
      << "<text x=\"" << f2(left + panel_w / 2) << "\" y=\"" << f2(top + panel_h + 40)
      << "\" text-anchor=\"middle\">" << escape(chart.x_title) << "</text>\n";

    for (std::size_t si = 0; si < series.size(); ++si) {
      const char* color = kPalette[si % (sizeof(kPalette) / sizeof(kPalette[0]))];
      std::vector<const Point*> pts;
      for (const auto& p : chart.points) {
        if (p.series == series[si]) pts.push_back(&p);
      }
      auto val = [&](const Point* p) { return rew ? p->reward : p->control; };
      auto err = [&](const Point* p) { return rew ? p->reward_se : p->control_se; };
      if (chart.categorical) {
        const double bw = panel_w / std::max<std::size_t>(chart.points.size(), 1) * 0.6;
        for (const Point* p : pts) {
          const double y0 = py(std::max(ys.lo, 0.0));
          const double y1 = py(val(p));
          s << "<rect x=\"" << f2(px(p->x) - bw / 2) << "\" y=\"" << f2(std::min(y0, y1)) << "\" width=\""
            << f2(bw) << "\" height=\"" << f2(std::abs(y0 - y1)) << "\" fill=\"" << color
            << "\" fill-opacity=\"0.7\"/>\n";
        }
      } else if (pts.size() > 1) {
        s << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
        for (std::size_t i = 0; i < pts.size(); ++i) {
          s << (i ? " " : "") << f2(px(pts[i]->x)) << ',' << f2(py(val(pts[i])));
        }
        s << "\"/>\n";
      }
      for (const Point* p : pts) {
        const double x = px(p->x);
        const double ya = py(val(p) - err(p));
        const double yb = py(val(p) + err(p));
        s << "<line x1=\"" << f2(x) << "\" y1=\"" << f2(ya) << "\" x2=\"" << f2(x) << "\" y2=\"" << f2(yb)
          << "\" stroke=\"black\"/>\n"
          << "<line x1=\"" << f2(x - 4) << "\" y1=\"" << f2(ya) << "\" x2=\"" << f2(x + 4) << "\" y2=\"" << f2(ya)
          << "\" stroke=\"black\"/>\n"
          << "<line x1=\"" << f2(x - 4) << "\" y1=\"" << f2(yb) << "\" x2=\"" << f2(x + 4) << "\" y2=\"" << f2(yb)
          << "\" stroke=\"black\"/>\n";
        if (!chart.categorical) {
          s << "<circle cx=\"" << f2(x) << "\" cy=\"" << f2(py(val(p))) << "\" r=\"3\" fill=\"" << color
            << "\"/>\n";
        }
      }
    }
    s << "</g>\n";
  }

  // legend
  if (!chart.categorical || series.size() > 1) {
    double lx = left0;
    for (std::size_t si = 0; si < series.size(); ++si) {
      const char* color = kPalette[si % (sizeof(kPalette) / sizeof(kPalette[0]))];
      s << "<rect x=\"" << f2(lx) << "\" y=\"" << f2(H - 22) << "\" width=\"12\" height=\"12\" fill=\"" << color
        << "\"/>\n<text x=\"" << f2(lx + 16) << "\" y=\"" << f2(H - 12) << "\">" << escape(series[si])
        << "</text>\n";
      lx += 120;
    }
  }
  s << "<text x=\"" << W - 10 << "\" y=\"" << H - 12
    << "\" text-anchor=\"end\" fill=\"#555555\">error bars: &#177;1 SE across seeds</text>\n";
  s << "</svg>\n";
  return s.str();
}

std::string summary_text(const std::vector<Chart>& charts) {
  std::ostringstream s;
  char buf[200];
  for (const auto& c : charts) {
    s << "== " << c.sweep << " ==\n";
    std::snprintf(buf, sizeof(buf), "%-12s %-10s %5s %12s %10s %9s %9s %11s %9s\n", "series", "x", "seeds",
                  "reward", "se", "control", "se", "ctrl_nontgt", "hold_acc");
    s << buf;
    for (const auto& p : c.points) {
      std::snprintf(buf, sizeof(buf), "%-12s %-10s %5d %12.2f %10.2f %9.4f %9.4f %11.4f %9.4f\n", p.series.c_str(),
                    p.label.c_str(), p.n, p.reward, p.reward_se, p.control, p.control_se, p.control_nontarget,
                    p.holdout_acc);
      s << buf;
    }
    if (c.failed_rows) s << "failed rows: " << c.failed_rows << "\n";
    s << "\n";
  }
  return s.str();
}

Emitted emit_report(const std::vector<harness::CsvRow>& rows, const std::filesystem::path& dir) {
  const auto charts = build_charts(rows);
  std::filesystem::create_directories(dir);
  Emitted e;
  for (const auto& c : charts) {
    const auto path = dir / (c.sweep + ".svg");
    std::ofstream out(path, std::ios::binary);
    out << render_svg(c);
    if (!out) throw InputError("cannot write " + path.string());
    e.files.push_back(path);
  }
  const auto path = dir / "summary.txt";
  std::ofstream out(path, std::ios::binary);
  out << summary_text(charts);
  if (!out) throw InputError("cannot write " + path.string());
  e.files.push_back(path);
  return e;
}

}  // namespace bcp::report
