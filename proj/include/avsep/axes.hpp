#pragma once

#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

#include "avsep/errors.hpp"

namespace avsep {

// Semantic axis labels. Src is the estimated-source axis (M), Space the
// visual-grid axis (G), Joint the concatenated source+space axis (M+G),
// Time the shared frame axis (T), Depth the embedding axis (D), Sample the
// raw waveform axis (T'). Row/Col address image pixels, Tap addresses the
// within-window offset of framed signals, Head the attention-head axis.
//
// Each label has a "key-side" dual (suffix K) used when a tensor must hold
// two copies of the same semantic axis at once, e.g. attention scores indexed
// by both query time and attended (key) time, or a kernel indexed by input
// and output channels.
enum class Axis : std::uint8_t {
  Src,
  Space,
  Joint,
  Time,
  Depth,
  Sample,
  Row,
  Col,
  Tap,
  TapB,
  Head,
  SrcK,
  SpaceK,
  JointK,
  TimeK,
  DepthK,
  SampleK,
  RowK,
  ColK,
};

using AxisList = std::vector<Axis>;

inline bool is_keyed(Axis a) { return a >= Axis::SrcK; }

// Maps a label to its key-side dual.
inline Axis keyed(Axis a) {
  switch (a) {
    case Axis::Src: return Axis::SrcK;
    case Axis::Space: return Axis::SpaceK;
    case Axis::Joint: return Axis::JointK;
    case Axis::Time: return Axis::TimeK;
    case Axis::Depth: return Axis::DepthK;
    case Axis::Sample: return Axis::SampleK;
    case Axis::Row: return Axis::RowK;
    case Axis::Col: return Axis::ColK;
    default:
      throw ContractError("axis has no key-side dual: " + std::to_string(int(a)));
  }
}

inline Axis unkeyed(Axis a) {
  switch (a) {
    case Axis::SrcK: return Axis::Src;
    case Axis::SpaceK: return Axis::Space;
    case Axis::JointK: return Axis::Joint;
    case Axis::TimeK: return Axis::Time;
    case Axis::DepthK: return Axis::Depth;
    case Axis::SampleK: return Axis::Sample;
    case Axis::RowK: return Axis::Row;
    case Axis::ColK: return Axis::Col;
    default: return a;
  }
}

inline const char* axis_name(Axis a) {
  switch (a) {
    case Axis::Src: return "src";
    case Axis::Space: return "space";
    case Axis::Joint: return "joint";
    case Axis::Time: return "time";
    case Axis::Depth: return "depth";
    case Axis::Sample: return "sample";
    case Axis::Row: return "row";
    case Axis::Col: return "col";
    case Axis::Tap: return "tap";
    case Axis::TapB: return "tap_b";
    case Axis::Head: return "head";
    case Axis::SrcK: return "src_k";
    case Axis::SpaceK: return "space_k";
    case Axis::JointK: return "joint_k";
    case Axis::TimeK: return "time_k";
    case Axis::DepthK: return "depth_k";
    case Axis::SampleK: return "sample_k";
    case Axis::RowK: return "row_k";
    case Axis::ColK: return "col_k";
  }
  return "?";
}

inline Axis axis_from_name(const std::string& s) {
  for (int i = 0; i <= int(Axis::ColK); ++i) {
    Axis a = Axis(i);
    if (s == axis_name(a)) return a;
  }
  throw ContractError("unknown axis name: " + s);
}

// Small ordered axis set with membership queries.
class AxisSet {
 public:
  AxisSet() = default;
  AxisSet(std::initializer_list<Axis> axes) : axes_(axes) {}
  explicit AxisSet(AxisList axes) : axes_(std::move(axes)) {}

  bool contains(Axis a) const {
    for (Axis x : axes_)
      if (x == a) return true;
    return false;
  }
  bool empty() const { return axes_.empty(); }
  std::size_t size() const { return axes_.size(); }
  const AxisList& list() const { return axes_; }
  auto begin() const { return axes_.begin(); }
  auto end() const { return axes_.end(); }

 private:
  AxisList axes_;
};

}  // namespace avsep
