#pragma once

#include <boost/multiprecision/cpp_int.hpp>

#include <stdexcept>
#include <string>

namespace pco {

using Rational = boost::multiprecision::cpp_rational;

inline double to_double(const Rational& r) { return r.convert_to<double>(); }

// Always "p/q", including integers ("1/1"), so exported reports parse uniformly.
inline std::string to_fraction_string(const Rational& r) {
  return boost::multiprecision::numerator(r).str() + "/" +
         boost::multiprecision::denominator(r).str();
}

namespace detail {

// cpp_int treats a leading '0' as an octal prefix; parse base-10 explicitly.
inline boost::multiprecision::cpp_int parse_decimal_int(const std::string& text) {
  std::size_t k = 0;
  bool negative = false;
  if (k < text.size() && (text[k] == '-' || text[k] == '+')) negative = text[k++] == '-';
  if (k == text.size()) throw std::invalid_argument("empty integer literal");
  boost::multiprecision::cpp_int value = 0;
  for (; k < text.size(); ++k) {
    if (text[k] < '0' || text[k] > '9') throw std::invalid_argument("bad digit in '" + text + "'");
    value = value * 10 + (text[k] - '0');
  }
  return negative ? boost::multiprecision::cpp_int(-value) : value;
}

}  // namespace detail

// Accepts "p/q", "p", or a decimal literal such as "0.25" (converted exactly).
inline Rational parse_rational(const std::string& text) {
  using boost::multiprecision::cpp_int;
  const auto slash = text.find('/');
  if (slash != std::string::npos) {
    const cpp_int den = detail::parse_decimal_int(text.substr(slash + 1));
    if (den == 0) throw std::invalid_argument("zero denominator in '" + text + "'");
    return Rational(detail::parse_decimal_int(text.substr(0, slash)), den);
  }
  const auto dot = text.find('.');
  if (dot == std::string::npos) return Rational(detail::parse_decimal_int(text));
  const std::string fraction = text.substr(dot + 1);
  cpp_int scale = 1;
  for (std::size_t k = 0; k < fraction.size(); ++k) scale *= 10;
  std::string whole = text.substr(0, dot);
  const bool negative = !whole.empty() && whole[0] == '-';
  if (whole.empty() || whole == "-" || whole == "+") whole += "0";
  const cpp_int int_part = detail::parse_decimal_int(whole);
  const cpp_int frac_part = fraction.empty() ? cpp_int(0) : detail::parse_decimal_int(fraction);
  const cpp_int magnitude = (negative ? cpp_int(-int_part) : int_part) * scale + frac_part;
  return Rational(negative ? cpp_int(-magnitude) : magnitude, scale);
}

}  // namespace pco
