// Deterministic numeric text formatting shared by the prompt builder and the
// CSV/JSON writers: shortest round-trip representation via std::to_chars.
#pragma once

#include <charconv>
#include <stdexcept>
#include <string>
#include <string_view>

namespace cfope {

inline std::string format_double(double value) {
    char buf[32];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
    if (ec != std::errc()) throw std::runtime_error("format_double: conversion failed");
    return std::string(buf, ptr);
}

inline double parse_double(std::string_view text) {
    double value = 0.0;
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc() || ptr != text.data() + text.size())
        throw std::invalid_argument("parse_double: not a number: " + std::string(text));
    return value;
}

}  // namespace cfope
