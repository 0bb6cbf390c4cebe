// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <cstdio>
#include <string>

#include "condlstmq/errors.hpp"

namespace condlstmq {

/// Calendar day.
using Date = std::chrono::sys_days;

/// Parses YYYY-MM-DD; throws ParseError otherwise.
inline Date parse_date(const std::string& s) {
  int y = 0;
  unsigned m = 0, d = 0;
  char tail = 0;
  if (s.size() != 10 || std::sscanf(s.c_str(), "%4d-%2u-%2u%c", &y, &m, &d, &tail) != 3)
    throw ParseError("unparseable date '" + s + "' (expected YYYY-MM-DD)");
  const std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{m}, std::chrono::day{d}};
  if (!ymd.ok()) throw ParseError("invalid calendar date '" + s + "'");
  return Date{ymd};
}

inline std::string format_date(Date d) {
  const std::chrono::year_month_day ymd{d};
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()), static_cast<unsigned>(ymd.month()),
                static_cast<unsigned>(ymd.day()));
  return buf;
}

inline long days_between(Date from, Date to) { return static_cast<long>((to - from).count()); }

inline Date add_days(Date d, long n) { return d + std::chrono::days{n}; }

/// 0-based day of the calendar year.
inline unsigned day_of_year(Date d) {
  const std::chrono::year_month_day ymd{d};
  return static_cast<unsigned>((d - Date{ymd.year() / std::chrono::January / 1}).count());
}

/// 0-based week-of-year in [0, 51]; days 364/365 fold into week 51.
inline unsigned week_of_year(Date d) {
  const unsigned w = day_of_year(d) / 7;
  return w > 51 ? 51 : w;
}

}  // namespace condlstmq
