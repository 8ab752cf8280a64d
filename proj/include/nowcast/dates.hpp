#pragma once

#include <string>

namespace nowcast {

// Calendar day stored as days since 1970-01-01. Whole days only; no
// timezone handling.
struct Date {
  int days = 0;

  friend bool operator==(Date a, Date b) { return a.days == b.days; }
  friend bool operator!=(Date a, Date b) { return a.days != b.days; }
  friend bool operator<(Date a, Date b) { return a.days < b.days; }
  friend bool operator<=(Date a, Date b) { return a.days <= b.days; }
  friend int operator-(Date a, Date b) { return a.days - b.days; }
  Date operator+(int n) const { return Date{days + n}; }
};

// Parses strict ISO-8601 "YYYY-MM-DD". Throws std::invalid_argument on
// malformed input or out-of-range month/day.
Date parse_date(const std::string& text);

std::string format_date(Date d);

// 0 = Monday ... 6 = Sunday.
int day_of_week(Date d);

}  // namespace nowcast
