#pragma once

#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "vesselforge/common.hpp"
#include "vesselforge/morphometry.hpp"

namespace vesselforge {

// CSV row builders for the tabular outputs. Reals use fixed-point formatting
// so identical runs produce identical bytes.

inline std::string metrics_csv_header() { return "scan_id,dsc,iou,sensitivity,precision"; }

inline std::string metrics_csv_row(const std::string& scan_id, double dsc, double iou, double sensitivity,
                                   double precision) {
  return scan_id + "," + format_fixed(dsc, 4) + "," + format_fixed(iou, 4) + "," + format_fixed(sensitivity, 4) +
         "," + format_fixed(precision, 4);
}

inline std::string morph_csv_header() {
  return "scan_id,tbv_ml,surface_cm2,n_segments,n_endpoints,n_branchpoints,tree_length_mm,bv5_ml,bv5_tbv,"
         "r0_1,r1_2,r2_3,r3_4,r_ge4";
}

inline std::string morph_csv_row(const std::string& scan_id, const MorphometryReport& r) {
  std::string row = scan_id;
  row += "," + format_fixed(r.tbv_ml, 4);
  row += "," + format_fixed(r.surface_cm2, 4);
  row += "," + std::to_string(r.n_segments);
  row += "," + std::to_string(r.n_endpoints);
  row += "," + std::to_string(r.n_branchpoints);
  row += "," + format_fixed(r.tree_length_mm, 4);
  row += "," + format_fixed(r.bv5_ml, 4);
  row += "," + format_fixed(r.bv5_tbv, 4);
  for (const size_t b : r.radius_bins) row += "," + std::to_string(b);
  return row;
}

inline std::string graph_csv_header() { return "segment_id,node_a,node_b,length_mm,mean_radius_mm,volume_ml"; }

inline std::string graph_csv_row(const VesselSegment& s) {
  return std::to_string(s.id) + "," + std::to_string(s.node_a) + "," + std::to_string(s.node_b) + "," +
         format_fixed(s.length_mm, 4) + "," + format_fixed(s.mean_radius_mm, 4) + "," + format_fixed(s.volume_ml, 4);
}

inline std::string stats_csv_header() { return "metric,comparison,f_or_t,p_raw,p_adjusted,significant"; }

inline std::string stats_csv_row(const std::string& metric, const std::string& comparison, double f_or_t,
                                 double p_raw, double p_adjusted, bool significant) {
  return metric + "," + comparison + "," + format_fixed(f_or_t, 6) + "," + format_fixed(p_raw, 6) + "," +
         format_fixed(p_adjusted, 6) + "," + (significant ? "true" : "false");
}

// Numeric table reader for our own CSV outputs (no quoting in the format).
struct NumericTable {
  std::vector<std::string> columns;  // excludes the leading scan_id column
  std::vector<std::string> ids;
  std::vector<std::vector<double>> rows;  // rows[i][c] for columns[c]
};

inline NumericTable read_numeric_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("csv: cannot open '" + path + "'");
  NumericTable t;
  std::string line;
  size_t line_no = 0;
  const auto split = [](const std::string& s) {
    std::vector<std::string> fields;
    std::string cur;
    std::stringstream ss(s);
    while (std::getline(ss, cur, ',')) fields.push_back(cur);
    if (!s.empty() && s.back() == ',') fields.emplace_back();
    return fields;
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::vector<std::string> fields = split(line);
    if (t.columns.empty() && t.ids.empty()) {
      if (fields.size() < 2 || fields[0] != "scan_id")
        throw std::invalid_argument("csv: " + path + ": header must start with scan_id");
      t.columns.assign(fields.begin() + 1, fields.end());
      continue;
    }
    if (fields.size() != t.columns.size() + 1)
      throw std::invalid_argument("csv: " + path + ":" + std::to_string(line_no) + ": expected " +
                                  std::to_string(t.columns.size() + 1) + " fields, got " +
                                  std::to_string(fields.size()));
    t.ids.push_back(fields[0]);
    std::vector<double> row;
    row.reserve(t.columns.size());
    for (size_t c = 1; c < fields.size(); ++c) {
      try {
        size_t pos = 0;
        const double v = std::stod(fields[c], &pos);
        if (pos != fields[c].size()) throw std::invalid_argument("trailing characters");
        row.push_back(v);
      } catch (const std::exception&) {
        throw std::invalid_argument("csv: " + path + ":" + std::to_string(line_no) + ": field '" + fields[c] +
                                    "' is not numeric");
      }
    }
    t.rows.push_back(std::move(row));
  }
  if (t.columns.empty()) throw std::invalid_argument("csv: " + path + ": missing header");
  return t;
}

}  // namespace vesselforge
