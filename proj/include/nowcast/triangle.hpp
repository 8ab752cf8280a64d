#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "nowcast/dates.hpp"

namespace nowcast {

// One long-format surveillance record: `count` events occurred in
// `region` on `event_date` and became visible on `report_date`.
struct EventRecord {
  std::string region;
  Date event_date;
  Date report_date;
  long count = 0;
};

enum class LatePolicy { fold_into_last, drop };

// Counts organised by event time t = 1..T, region s = 1..S and delay
// d = 1..D_max, where d = (report_date - event_date) + 1, so d = 1 means
// "reported within the event's own reporting period". Row totals
// y[t,s] = sum_d z[t,s,d] are maintained as an invariant. Cells may be
// flagged missing (data loss), which is distinct from an observed zero.
class ReportingTriangle {
 public:
  ReportingTriangle(int T, int S, int d_max, Date time_origin,
                    std::vector<std::string> regions);

  int T() const { return T_; }
  int S() const { return S_; }
  int d_max() const { return d_max_; }
  Date time_origin() const { return origin_; }
  const std::vector<std::string>& regions() const { return regions_; }

  // 1-based indices throughout.
  long z(int t, int s, int d) const { return z_[idx(t, s, d)]; }
  long y(int t, int s) const { return y_[(t - 1) * S_ + (s - 1)]; }
  bool missing(int t, int s, int d) const { return missing_[idx(t, s, d)]; }

  void set_z(int t, int s, int d, long value);
  void set_missing(int t, int s, int d);

  Date date_of(int t) const { return origin_ + (t - 1); }
  int region_index(const std::string& name) const;  // 1-based, -1 if absent

  // Keep only rows t = 1..new_T (rolling-experiment refits on growing data).
  ReportingTriangle truncated(int new_T) const;

 private:
  std::size_t idx(int t, int s, int d) const;
  int T_, S_, d_max_;
  Date origin_;
  std::vector<std::string> regions_;
  std::vector<long> z_;
  std::vector<long> y_;
  std::vector<uint8_t> missing_;
};

// Records every read of an unobservable cell; used by the rolling
// harness to prove no future data leaks into a fit.
struct AccessAuditor {
  long reads = 0;
  long violations = 0;
};

// A reporting triangle with present-day censoring applied: cell (t,s,d)
// is observable iff t + (d-1) <= t0. Models read partial counts only
// through this view.
class CensoredTriangle {
 public:
  CensoredTriangle(const ReportingTriangle& tri, int t0);

  const ReportingTriangle& triangle() const { return *tri_; }
  int t0() const { return t0_; }
  int T() const { return tri_->T(); }
  int S() const { return tri_->S(); }
  int d_max() const { return tri_->d_max(); }

  bool observable(int t, int s, int d) const {
    (void)s;
    return t + (d - 1) <= t0_;
  }
  // Observable and not flagged missing.
  bool observed(int t, int s, int d) const {
    return observable(t, s, d) && !tri_->missing(t, s, d);
  }
  // Number of observable delay cells in row t: min(D_max, t0 - t + 1).
  int observed_delays(int t) const;
  bool fully_observed(int t) const { return t + d_max() - 1 <= t0_; }

  // Audited accessor; counts a violation if the mask says unobservable.
  long z(int t, int s, int d) const;

  // Sum of z over observed cells of row (t,s) (missing cells excluded).
  long observed_partial_sum(int t, int s) const;

  void attach_auditor(AccessAuditor* a) const { auditor_ = a; }

 private:
  const ReportingTriangle* tri_;
  int t0_;
  mutable AccessAuditor* auditor_ = nullptr;
};

// Builders -------------------------------------------------------------

// Optional explicit grid; required when `records` is empty. Regions listed
// here are authoritative: a record with a region not in the list is
// rejected.
struct TriangleGrid {
  Date start;
  int T = 0;
  std::vector<std::string> regions;
};

ReportingTriangle build_triangle(const std::vector<EventRecord>& records,
                                 int d_max,
                                 LatePolicy late_policy = LatePolicy::fold_into_last,
                                 const std::optional<TriangleGrid>& grid = std::nullopt);

CensoredTriangle censor_at(const ReportingTriangle& tri, int t0);

// k-th element = sum of z over observed delays <= k for row (t,s); empty
// when the row has no observable delays.
std::vector<long> cumulative_reported(const CensoredTriangle& ct, int t, int s);

// I/O -------------------------------------------------------------------

// Long format: header `region,event_date,report_date,count`.
std::vector<EventRecord> read_records_csv(std::istream& in);
std::vector<EventRecord> read_records_csv_file(const std::string& path);

// Wide format: header `region,event_date,d1..dK`; returns a triangle with
// d_max = K.
ReportingTriangle read_wide_csv(std::istream& in);

// Detects the format from the header line.
ReportingTriangle read_triangle_csv_file(const std::string& path, int d_max,
                                         LatePolicy late_policy = LatePolicy::fold_into_last);

void write_triangle_csv(std::ostream& out, const ReportingTriangle& tri);

}  // namespace nowcast
