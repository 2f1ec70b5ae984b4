#pragma once

#include <cmath>
#include <compare>
#include <cstdint>
#include <string>

namespace fairmarket {

/// Prices live on an integer-cent grid.
using Cents = int;

/// Agents are addressed by their index in the scenario's household list.
using AgentId = int;

/// Energy in whole micro-kWh. Market quantities are kept exact so that
/// per-slot conservation checks hold without tolerance.
class Energy {
 public:
  constexpr Energy() = default;

  static constexpr Energy from_micro(std::int64_t micro) { return Energy(micro); }

  /// Rounds to the nearest 1e-6 kWh.
  static Energy from_kwh(double kwh) {
    return Energy(static_cast<std::int64_t>(std::llround(kwh * 1e6)));
  }

  /// Rounds toward zero; used where a bound must never be exceeded.
  static Energy floor_kwh(double kwh) {
    return Energy(static_cast<std::int64_t>(std::floor(kwh * 1e6 + 1e-9)));
  }

  constexpr std::int64_t micro() const { return micro_; }
  constexpr double kwh() const { return static_cast<double>(micro_) * 1e-6; }
  constexpr bool positive() const { return micro_ > 0; }
  constexpr bool zero() const { return micro_ == 0; }

  constexpr Energy& operator+=(Energy o) {
    micro_ += o.micro_;
    return *this;
  }
  constexpr Energy& operator-=(Energy o) {
    micro_ -= o.micro_;
    return *this;
  }
  friend constexpr Energy operator+(Energy a, Energy b) { return Energy(a.micro_ + b.micro_); }
  friend constexpr Energy operator-(Energy a, Energy b) { return Energy(a.micro_ - b.micro_); }
  friend constexpr Energy operator-(Energy a) { return Energy(-a.micro_); }
  friend constexpr auto operator<=>(Energy, Energy) = default;

 private:
  constexpr explicit Energy(std::int64_t micro) : micro_(micro) {}
  std::int64_t micro_ = 0;
};

constexpr Energy min(Energy a, Energy b) { return a < b ? a : b; }
constexpr Energy max(Energy a, Energy b) { return a < b ? b : a; }

/// Cash in micro-cents (cents x micro-kWh), exact for price x quantity.
class Money {
 public:
  constexpr Money() = default;
  static constexpr Money from_micro(std::int64_t micro) { return Money(micro); }

  constexpr std::int64_t micro() const { return micro_; }
  constexpr double cents() const { return static_cast<double>(micro_) * 1e-6; }

  constexpr Money& operator+=(Money o) {
    micro_ += o.micro_;
    return *this;
  }
  constexpr Money& operator-=(Money o) {
    micro_ -= o.micro_;
    return *this;
  }
  friend constexpr Money operator+(Money a, Money b) { return Money(a.micro_ + b.micro_); }
  friend constexpr Money operator-(Money a, Money b) { return Money(a.micro_ - b.micro_); }
  friend constexpr Money operator-(Money a) { return Money(-a.micro_); }
  friend constexpr auto operator<=>(Money, Money) = default;

 private:
  constexpr explicit Money(std::int64_t micro) : micro_(micro) {}
  std::int64_t micro_ = 0;
};

constexpr Money value_of(Energy quantity, Cents price) {
  return Money::from_micro(quantity.micro() * static_cast<std::int64_t>(price));
}

/// Fixed six-decimal rendering used by every CSV writer.
std::string format_kwh(Energy e);

}  // namespace fairmarket
