#include "sepipe/report.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <sstream>

#include "sepipe/errors.hpp"

namespace sepipe {

namespace {

// shortest digits that parse back to the same value
std::string fmt(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& cell, const std::string& where) {
  double v = 0.0;
  const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (res.ec != std::errc{} || res.ptr != cell.data() + cell.size())
    throw ParseError(where + ": expected a number, got '" + cell + "'");
  return v;
}

int parse_int(const std::string& cell, const std::string& where) {
  int v = 0;
  const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (res.ec != std::errc{} || res.ptr != cell.data() + cell.size())
    throw ParseError(where + ": expected an integer, got '" + cell + "'");
  return v;
}

std::string sanitize(std::string s) {
  for (char& c : s) {
    if (c == ',') c = ';';
    if (c == '\n' || c == '\r') c = ' ';
  }
  return s;
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

void write_file(const std::string& body, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(path + ": cannot open for writing");
  out << body;
  if (!out) throw IoError(path + ": write failed");
}

std::string technique_label(const ReportRow& r) {
  if (r.option == "um")
    return "um " + r.blur + " r=" + fmt(r.radius) + " a=" + fmt(r.amount);
  if (r.option == "hfe") return "hfe d0=" + fmt(r.cutoff);
  return r.option;
}

std::string rate_cell_text(const ReportRow& r) {
  if (!r.error.empty()) return "ERR";
  if (!r.rate_defined) return "n/a";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f%%", r.rate_of_reduction_pct);
  return buf;
}

}  // namespace

ReportRow make_report_row(const std::string& model_tag, const AttackConfig& attack,
                          const PipelineConfig& pipeline, const Aggregate& base,
                          const Aggregate& defended, const RateResult& rate) {
  ReportRow row;
  row.model = model_tag;
  row.attack = to_string(attack.kind);
  row.eps = attack.epsilon;
  if (attack.kind == AttackKind::Pgd) {
    row.alpha = attack.alpha;
    row.iters = attack.iters;
  }
  row.threat_mode = to_string(attack.threat);
  row.option = to_string(pipeline.enhance.option);
  if (pipeline.enhance.option == EnhanceOption::Um) {
    row.blur = to_string(pipeline.enhance.um.blur);
    row.radius = pipeline.enhance.um.radius;
    row.amount = pipeline.enhance.um.amount;
  } else if (pipeline.enhance.option == EnhanceOption::Hfe) {
    row.cutoff = pipeline.enhance.hfe.cutoff;
  }
  row.segmented = pipeline.segmented;
  row.n_total = defended.n_total;
  row.n_filtered = defended.n_filtered;
  row.diff_base = base.defined ? base.diff : 0.0;
  row.diff_defended = defended.defined ? defended.diff : 0.0;
  row.rate_defined = rate.defined;
  row.rate_of_reduction_pct = rate.defined ? rate.value * 100.0 : 0.0;
  return row;
}

std::string report_csv_header() {
  return "model,attack,eps,alpha,iters,threat_mode,option,blur,radius,amount,cutoff,"
         "segmented,n_total,n_filtered,diff_base,diff_defended,rate_of_reduction_pct,error";
}

std::string to_csv(const std::vector<ReportRow>& rows) {
  std::string out = report_csv_header() + "\n";
  for (const ReportRow& r : rows) {
    out += sanitize(r.model) + ',' + sanitize(r.attack) + ',' + fmt(r.eps) + ',' + fmt(r.alpha) +
           ',' + std::to_string(r.iters) + ',' + sanitize(r.threat_mode) + ',' +
           sanitize(r.option) + ',' + sanitize(r.blur) + ',' + fmt(r.radius) + ',' +
           fmt(r.amount) + ',' + fmt(r.cutoff) + ',' + (r.segmented ? "1" : "0") + ',' +
           std::to_string(r.n_total) + ',' + std::to_string(r.n_filtered) + ',' +
           fmt(r.diff_base) + ',' + fmt(r.diff_defended) + ',' +
           (r.rate_defined ? fmt(r.rate_of_reduction_pct) : std::string()) + ',' +
           sanitize(r.error) + '\n';
  }
  return out;
}

void write_report_csv(const std::vector<ReportRow>& rows, const std::string& path) {
  write_file(to_csv(rows), path);
}

std::vector<ReportRow> read_report_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path + ": cannot open report");
  std::string line;
  int line_no = 0;
  std::vector<ReportRow> rows;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::string where = path + ":" + std::to_string(line_no);
    if (line_no == 1) {
      if (line != report_csv_header())
        throw ParseError(where + ": unexpected report header '" + line + "'");
      continue;
    }
    const auto f = split_fields(line);
    if (f.size() != 18)
      throw ParseError(where + ": expected 18 fields, got " + std::to_string(f.size()));
    ReportRow r;
    r.model = f[0];
    r.attack = f[1];
    r.eps = parse_double(f[2], where);
    r.alpha = parse_double(f[3], where);
    r.iters = parse_int(f[4], where);
    r.threat_mode = f[5];
    r.option = f[6];
    r.blur = f[7];
    r.radius = parse_double(f[8], where);
    r.amount = parse_double(f[9], where);
    r.cutoff = parse_double(f[10], where);
    r.segmented = parse_int(f[11], where) != 0;
    r.n_total = parse_int(f[12], where);
    r.n_filtered = parse_int(f[13], where);
    r.diff_base = parse_double(f[14], where);
    r.diff_defended = parse_double(f[15], where);
    r.rate_defined = !f[16].empty();
    r.rate_of_reduction_pct = r.rate_defined ? parse_double(f[16], where) : 0.0;
    r.error = f[17];
    rows.push_back(std::move(r));
  }
  if (line_no == 0) throw ParseError(path + ": empty report");
  return rows;
}

std::string to_text_table(const std::vector<ReportRow>& rows) {
  std::ostringstream out;
  std::string open_group;
  // label -> column cells, in first-seen order
  std::vector<std::pair<std::string, std::array<std::string, 2>>> table;

  auto flush = [&]() {
    if (open_group.empty()) return;
    out << open_group << "\n";
    out << "  " << std::string(34, '-') << "\n";
    char line[96];
    std::snprintf(line, sizeof line, "  %-26s %12s %12s", "technique", "without_seg", "with_seg");
    out << line << "\n";
    for (const auto& [label, cells] : table) {
      std::snprintf(line, sizeof line, "  %-26s %12s %12s", label.c_str(), cells[0].c_str(),
                    cells[1].c_str());
      out << line << "\n";
    }
    out << "\n";
    table.clear();
  };

  for (const ReportRow& r : rows) {
    std::string group = "model=" + r.model + " attack=" + r.attack + " eps=" + fmt(r.eps);
    if (r.attack == "pgd") group += " alpha=" + fmt(r.alpha) + " iters=" + std::to_string(r.iters);
    group += " threat=" + r.threat_mode;
    if (group != open_group) {
      flush();
      open_group = group;
    }
    const std::string label = technique_label(r);
    auto it = std::find_if(table.begin(), table.end(),
                           [&](const auto& e) { return e.first == label; });
    if (it == table.end()) {
      table.push_back({label, {"", ""}});
      it = std::prev(table.end());
    }
    it->second[r.segmented ? 1 : 0] = rate_cell_text(r);
  }
  flush();
  return out.str();
}

void write_text_table(const std::vector<ReportRow>& rows, const std::string& path) {
  write_file(to_text_table(rows), path);
}

std::string to_heatmap_csv(const std::vector<ReportRow>& rows) {
  std::string out = "radius,amount,rate_of_reduction_pct\n";
  for (const ReportRow& r : rows) {
    if (r.option != "um" || r.blur != "gaussian") continue;
    out += fmt(r.radius) + ',' + fmt(r.amount) + ',' +
           (r.rate_defined ? fmt(r.rate_of_reduction_pct) : std::string()) + '\n';
  }
  return out;
}

void write_heatmap_csv(const std::vector<ReportRow>& rows, const std::string& path) {
  write_file(to_heatmap_csv(rows), path);
}

}  // namespace sepipe
