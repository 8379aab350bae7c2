#include "lcnorm/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>

namespace lcnorm::report {

namespace {

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                          "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

}  // namespace

void write_svg_chart(std::ostream& os, const std::string& title,
                     const std::vector<Series>& series, bool log_x) {
  const double W = 800, H = 500;
  const double ml = 70, mr = 20, mt = 40, mb = 50;
  double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin;
  double ymin = xmin, ymax = -xmin;
  for (const auto& s : series)
    for (size_t i = 0; i < s.x.size(); ++i) {
      const double xv = log_x ? std::log10(s.x[i]) : s.x[i];
      xmin = std::min(xmin, xv);
      xmax = std::max(xmax, xv);
      ymin = std::min(ymin, s.y[i]);
      ymax = std::max(ymax, s.y[i]);
    }
  if (!(xmax > xmin)) { xmax = xmin + 1.0; }
  if (!(ymax > ymin)) { ymax = ymin + 1.0; }
  const double ypad = 0.05 * (ymax - ymin);
  ymin -= ypad;
  ymax += ypad;

  auto X = [&](double x) {
    const double v = log_x ? std::log10(x) : x;
    return ml + (v - xmin) / (xmax - xmin) * (W - ml - mr);
  };
  auto Y = [&](double y) {
    return H - mb - (y - ymin) / (ymax - ymin) * (H - mt - mb);
  };

  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"800\" "
        "height=\"500\" viewBox=\"0 0 800 500\">\n";
  os << "<rect width=\"800\" height=\"500\" fill=\"white\"/>\n";
  os << "<text x=\"400\" y=\"24\" text-anchor=\"middle\" "
        "font-family=\"sans-serif\" font-size=\"16\">"
     << title << "</text>\n";
  // axes
  os << "<line x1=\"" << ml << "\" y1=\"" << H - mb << "\" x2=\"" << W - mr
     << "\" y2=\"" << H - mb << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml
     << "\" y2=\"" << H - mb << "\" stroke=\"black\"/>\n";
  // ticks
  for (int i = 0; i <= 5; ++i) {
    const double tx = xmin + (xmax - xmin) * i / 5.0;
    const double px = ml + (W - ml - mr) * i / 5.0;
    os << "<line x1=\"" << px << "\" y1=\"" << H - mb << "\" x2=\"" << px
       << "\" y2=\"" << H - mb + 5 << "\" stroke=\"black\"/>\n";
    os << "<text x=\"" << px << "\" y=\"" << H - mb + 20
       << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
          "font-size=\"11\">"
       << fmt(log_x ? std::pow(10.0, tx) : tx) << "</text>\n";
    const double ty = ymin + (ymax - ymin) * i / 5.0;
    const double py = H - mb - (H - mt - mb) * i / 5.0;
    os << "<line x1=\"" << ml - 5 << "\" y1=\"" << py << "\" x2=\"" << ml
       << "\" y2=\"" << py << "\" stroke=\"black\"/>\n";
    os << "<text x=\"" << ml - 8 << "\" y=\"" << py + 4
       << "\" text-anchor=\"end\" font-family=\"sans-serif\" "
          "font-size=\"11\">"
       << fmt(ty) << "</text>\n";
  }
  int ci = 0;
  for (const auto& s : series) {
    const char* color = kPalette[ci % 8];
    os << "<polyline fill=\"none\" stroke=\"" << color
       << "\" stroke-width=\"1.5\" points=\"";
    for (size_t i = 0; i < s.x.size(); ++i)
      os << X(s.x[i]) << "," << Y(s.y[i]) << " ";
    os << "\"/>\n";
    for (size_t i = 0; i < s.x.size(); ++i)
      os << "<circle cx=\"" << X(s.x[i]) << "\" cy=\"" << Y(s.y[i])
         << "\" r=\"2.5\" fill=\"" << color << "\"/>\n";
    os << "<text x=\"" << W - mr - 10 << "\" y=\"" << mt + 16 * (ci + 1)
       << "\" text-anchor=\"end\" font-family=\"sans-serif\" "
          "font-size=\"12\" fill=\""
       << color << "\">" << s.label << "</text>\n";
    ++ci;
  }
  os << "</svg>\n";
}

void write_gram_csv(std::ostream& os, const extend::GramPair& g) {
  char buf[128];
  auto block = [&](const char* name, const extend::Matrix& mat) {
    os << "block," << name << "\n";
    os << "label";
    for (const auto& l : g.labels) os << "," << l;
    os << "\n";
    for (int i = 0; i < mat.rows(); ++i) {
      os << g.labels[i];
      for (int j = 0; j < mat.cols(); ++j) {
        std::snprintf(buf, sizeof buf, ",%.17g%+.17gi", mat(i, j).real(),
                      mat(i, j).imag());
        os << buf;
      }
      os << "\n";
    }
  };
  os << "sigma," << g.sigma << "\n";
  os << "b," << g.b << "\n";
  block("G0", g.g0);
  block("G1", g.g1);
}

void write_cmin_csv(std::ostream& os, const extend::CminReport& r) {
  char buf[128];
  os << "b_star,gap_eigenvalue,iterations\n";
  std::snprintf(buf, sizeof buf, "%.17g,%.17g,%d\n", r.b_star,
                r.gap_eigenvalue, r.iterations);
  os << buf;
}

}  // namespace lcnorm::report
