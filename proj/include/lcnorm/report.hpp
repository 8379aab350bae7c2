#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "lcnorm/extend.hpp"

namespace lcnorm::report {

struct Series {
  std::string label;
  std::vector<double> x, y;
};

// Static 800x500 SVG line chart; optional logarithmic x axis.
void write_svg_chart(std::ostream& os, const std::string& title,
                     const std::vector<Series>& series, bool log_x = false);

// CSV matrix blocks G0 and G1 with basis labels.
void write_gram_csv(std::ostream& os, const extend::GramPair& g);

// CSV line `b_star,gap_eigenvalue,iterations`.
void write_cmin_csv(std::ostream& os, const extend::CminReport& r);

}  // namespace lcnorm::report
