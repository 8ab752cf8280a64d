#include "nowcast/triangle.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

namespace nowcast {

// ---- dates ------------------------------------------------------------

namespace {
// Howard Hinnant's civil-date algorithms.
int days_from_civil(int y, int m, int d) {
  y -= m <= 2;
  const int era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<int>(doe) - 719468;
}

void civil_from_days(int z, int& y, int& m, int& d) {
  z += 719468;
  const int era = (z >= 0 ? z : z - 146096) / 146097;
  const unsigned doe = static_cast<unsigned>(z - era * 146097);
  const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  y = static_cast<int>(yoe) + era * 400;
  const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const unsigned mp = (5 * doy + 2) / 153;
  d = static_cast<int>(doy - (153 * mp + 2) / 5 + 1);
  m = static_cast<int>(mp + (mp < 10 ? 3 : -9));
  y += m <= 2;
}
}  // namespace

Date parse_date(const std::string& text) {
  if (text.size() != 10 || text[4] != '-' || text[7] != '-')
    throw std::invalid_argument("bad date '" + text + "', expected YYYY-MM-DD");
  for (int i : {0, 1, 2, 3, 5, 6, 8, 9})
    if (text[i] < '0' || text[i] > '9')
      throw std::invalid_argument("bad date '" + text + "', expected YYYY-MM-DD");
  int y = std::stoi(text.substr(0, 4));
  int m = std::stoi(text.substr(5, 2));
  int d = std::stoi(text.substr(8, 2));
  static const int mdays[12] = {31, 29, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
  if (m < 1 || m > 12 || d < 1 || d > mdays[m - 1])
    throw std::invalid_argument("bad date '" + text + "': month/day out of range");
  return Date{days_from_civil(y, m, d)};
}

std::string format_date(Date d) {
  int y, m, dd;
  civil_from_days(d.days, y, m, dd);
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02d-%02d", y, m, dd);
  return buf;
}

int day_of_week(Date d) {
  // 1970-01-01 was a Thursday (index 3 with Monday = 0).
  int w = (d.days + 3) % 7;
  return w < 0 ? w + 7 : w;
}

// ---- ReportingTriangle --------------------------------------------------

ReportingTriangle::ReportingTriangle(int T, int S, int d_max, Date time_origin,
                                     std::vector<std::string> regions)
    : T_(T), S_(S), d_max_(d_max), origin_(time_origin), regions_(std::move(regions)) {
  if (T_ < 1 || S_ < 1) throw std::invalid_argument("triangle needs T >= 1 and S >= 1");
  if (d_max_ < 1) throw std::invalid_argument("d_max must be >= 1");
  if (static_cast<int>(regions_.size()) != S_)
    throw std::invalid_argument("region label count does not match S");
  z_.assign(static_cast<std::size_t>(T_) * S_ * d_max_, 0);
  y_.assign(static_cast<std::size_t>(T_) * S_, 0);
  missing_.assign(z_.size(), 0);
}

std::size_t ReportingTriangle::idx(int t, int s, int d) const {
  if (t < 1 || t > T_ || s < 1 || s > S_ || d < 1 || d > d_max_)
    throw std::out_of_range("triangle index out of range");
  return (static_cast<std::size_t>(t - 1) * S_ + (s - 1)) * d_max_ + (d - 1);
}

void ReportingTriangle::set_z(int t, int s, int d, long value) {
  if (value < 0) throw std::invalid_argument("z counts must be non-negative");
  std::size_t i = idx(t, s, d);
  y_[(t - 1) * S_ + (s - 1)] += value - z_[i];
  z_[i] = value;
}

void ReportingTriangle::set_missing(int t, int s, int d) {
  std::size_t i = idx(t, s, d);
  y_[(t - 1) * S_ + (s - 1)] -= z_[i];
  z_[i] = 0;
  missing_[i] = 1;
}

int ReportingTriangle::region_index(const std::string& name) const {
  for (int s = 0; s < S_; ++s)
    if (regions_[s] == name) return s + 1;
  return -1;
}

ReportingTriangle ReportingTriangle::truncated(int new_T) const {
  if (new_T < 1 || new_T > T_) throw std::invalid_argument("truncated: bad T");
  ReportingTriangle out(new_T, S_, d_max_, origin_, regions_);
  for (int t = 1; t <= new_T; ++t)
    for (int s = 1; s <= S_; ++s)
      for (int d = 1; d <= d_max_; ++d) {
        if (missing(t, s, d))
          out.set_missing(t, s, d);
        else
          out.set_z(t, s, d, z(t, s, d));
      }
  return out;
}

// ---- CensoredTriangle ---------------------------------------------------

CensoredTriangle::CensoredTriangle(const ReportingTriangle& tri, int t0)
    : tri_(&tri), t0_(t0) {
  if (t0 < 1 || t0 > tri.T())
    throw std::out_of_range("t0 must lie in [1, T]");
}

int CensoredTriangle::observed_delays(int t) const {
  return std::clamp(t0_ - t + 1, 0, d_max());
}

long CensoredTriangle::z(int t, int s, int d) const {
  if (auditor_) {
    ++auditor_->reads;
    if (!observable(t, s, d)) ++auditor_->violations;
  }
  return tri_->z(t, s, d);
}

long CensoredTriangle::observed_partial_sum(int t, int s) const {
  long sum = 0;
  int k = observed_delays(t);
  for (int d = 1; d <= k; ++d)
    if (!tri_->missing(t, s, d)) sum += z(t, s, d);
  return sum;
}

// ---- builders -----------------------------------------------------------

ReportingTriangle build_triangle(const std::vector<EventRecord>& records, int d_max,
                                 LatePolicy late_policy,
                                 const std::optional<TriangleGrid>& grid) {
  if (d_max < 1) throw std::invalid_argument("d_max must be >= 1");
  if (records.empty() && !grid)
    throw std::invalid_argument("empty record list requires an explicit grid");

  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    if (r.report_date < r.event_date)
      throw std::invalid_argument("record " + std::to_string(i) +
                                  ": report_date precedes event_date");
    if (r.count < 0)
      throw std::invalid_argument("record " + std::to_string(i) + ": negative count");
  }

  Date start{0};
  int T = 0;
  std::vector<std::string> regions;
  if (grid) {
    start = grid->start;
    T = grid->T;
    regions = grid->regions;
    for (std::size_t i = 0; i < records.size(); ++i) {
      const auto& r = records[i];
      if (std::find(regions.begin(), regions.end(), r.region) == regions.end())
        throw std::invalid_argument("record " + std::to_string(i) + ": unknown region '" +
                                    r.region + "'");
      if (r.event_date < start || T <= r.event_date - start)
        throw std::invalid_argument("record " + std::to_string(i) +
                                    ": event_date outside the grid");
    }
  } else {
    std::set<std::string> rset;
    Date lo = records.front().event_date, hi = records.front().event_date;
    for (const auto& r : records) {
      rset.insert(r.region);
      lo = std::min(lo, r.event_date);
      hi = std::max(hi, r.event_date);
    }
    start = lo;
    T = hi - lo + 1;
    regions.assign(rset.begin(), rset.end());
  }

  ReportingTriangle tri(T, static_cast<int>(regions.size()), d_max, start, regions);
  for (const auto& r : records) {
    if (r.count == 0) continue;
    int t = r.event_date - start + 1;
    int s = tri.region_index(r.region);
    int d = (r.report_date - r.event_date) + 1;
    if (d > d_max) {
      if (late_policy == LatePolicy::drop) continue;
      d = d_max;
    }
    tri.set_z(t, s, d, tri.z(t, s, d) + r.count);
  }
  return tri;
}

CensoredTriangle censor_at(const ReportingTriangle& tri, int t0) {
  return CensoredTriangle(tri, t0);
}

std::vector<long> cumulative_reported(const CensoredTriangle& ct, int t, int s) {
  if (t < 1 || t > ct.T() || s < 1 || s > ct.S())
    throw std::out_of_range("cumulative_reported: (t,s) out of range");
  int k = ct.observed_delays(t);
  std::vector<long> out;
  out.reserve(k);
  long run = 0;
  for (int d = 1; d <= k; ++d) {
    if (ct.observed(t, s, d)) run += ct.z(t, s, d);
    out.push_back(run);
  }
  return out;
}

// ---- CSV ------------------------------------------------------------------

namespace {
std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}
}  // namespace

std::vector<EventRecord> read_records_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line))
    throw std::invalid_argument("empty input");
  auto header = split_csv_line(line);
  if (header != std::vector<std::string>{"region", "event_date", "report_date", "count"})
    throw std::invalid_argument("expected header region,event_date,report_date,count");
  std::vector<EventRecord> records;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto f = split_csv_line(line);
    if (f.size() != 4)
      throw std::invalid_argument("line " + std::to_string(lineno) + ": expected 4 fields");
    EventRecord r;
    r.region = f[0];
    r.event_date = parse_date(f[1]);
    r.report_date = parse_date(f[2]);
    try {
      r.count = std::stol(f[3]);
    } catch (const std::exception&) {
      throw std::invalid_argument("line " + std::to_string(lineno) + ": bad count '" + f[3] + "'");
    }
    if (r.count < 0)
      throw std::invalid_argument("line " + std::to_string(lineno) + ": negative count");
    records.push_back(std::move(r));
  }
  return records;
}

std::vector<EventRecord> read_records_csv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open input file: " + path);
  return read_records_csv(in);
}

ReportingTriangle read_wide_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw std::invalid_argument("empty input");
  auto header = split_csv_line(line);
  if (header.size() < 3 || header[0] != "region" || header[1] != "event_date")
    throw std::invalid_argument("expected header region,event_date,d1..dK");
  int K = static_cast<int>(header.size()) - 2;
  for (int d = 1; d <= K; ++d)
    if (header[1 + d] != "d" + std::to_string(d))
      throw std::invalid_argument("expected delay column d" + std::to_string(d));

  struct Row {
    std::string region;
    Date day;
    std::vector<long> z;
  };
  std::vector<Row> rows;
  std::set<std::string> rset;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto f = split_csv_line(line);
    if (static_cast<int>(f.size()) != K + 2)
      throw std::invalid_argument("line " + std::to_string(lineno) + ": expected " +
                                  std::to_string(K + 2) + " fields");
    Row r;
    r.region = f[0];
    r.day = parse_date(f[1]);
    for (int d = 1; d <= K; ++d) {
      long v = std::stol(f[1 + d]);
      if (v < 0)
        throw std::invalid_argument("line " + std::to_string(lineno) + ": negative count");
      r.z.push_back(v);
    }
    rset.insert(r.region);
    rows.push_back(std::move(r));
  }
  if (rows.empty()) throw std::invalid_argument("no data rows");
  Date lo = rows.front().day, hi = rows.front().day;
  for (const auto& r : rows) {
    lo = std::min(lo, r.day);
    hi = std::max(hi, r.day);
  }
  std::vector<std::string> regions(rset.begin(), rset.end());
  ReportingTriangle tri(hi - lo + 1, static_cast<int>(regions.size()), K, lo, regions);
  for (const auto& r : rows) {
    int t = r.day - lo + 1;
    int s = tri.region_index(r.region);
    for (int d = 1; d <= K; ++d) tri.set_z(t, s, d, tri.z(t, s, d) + r.z[d - 1]);
  }
  return tri;
}

ReportingTriangle read_triangle_csv_file(const std::string& path, int d_max,
                                         LatePolicy late_policy) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open input file: " + path);
  std::string header;
  if (!std::getline(in, header)) throw std::invalid_argument(path + ": empty file");
  in.seekg(0);
  auto fields = split_csv_line(header);
  if (fields.size() >= 3 && fields[2] == "report_date")
    return build_triangle(read_records_csv(in), d_max, late_policy);
  return read_wide_csv(in);
}

void write_triangle_csv(std::ostream& out, const ReportingTriangle& tri) {
  out << "region,event_date";
  for (int d = 1; d <= tri.d_max(); ++d) out << ",d" << d;
  out << "\n";
  for (int t = 1; t <= tri.T(); ++t)
    for (int s = 1; s <= tri.S(); ++s) {
      out << tri.regions()[s - 1] << "," << format_date(tri.date_of(t));
      for (int d = 1; d <= tri.d_max(); ++d) out << "," << tri.z(t, s, d);
      out << "\n";
    }
}

}  // namespace nowcast
