#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "avsep/nn.hpp"
#include "avsep/tensor.hpp"

namespace avsep {

// ---------------------------------------------------------------------------
// WAV, 16-bit PCM mono. Doubles in [-1, 1] quantize to the int16 grid.
// ---------------------------------------------------------------------------

inline std::int16_t quantize_i16(double v) {
  double scaled = v * 32767.0;
  if (scaled > 32767.0) scaled = 32767.0;
  if (scaled < -32768.0) scaled = -32768.0;
  return static_cast<std::int16_t>(std::lround(scaled));
}

// Snaps a sample onto the value the WAV round trip will produce.
inline double quantize_sample(double v) { return quantize_i16(v) / 32767.0; }

namespace detail {
inline void put_u32(std::ostream& os, std::uint32_t v) {
  char b[4] = {char(v & 0xff), char((v >> 8) & 0xff), char((v >> 16) & 0xff),
               char((v >> 24) & 0xff)};
  os.write(b, 4);
}
inline void put_u16(std::ostream& os, std::uint16_t v) {
  char b[2] = {char(v & 0xff), char((v >> 8) & 0xff)};
  os.write(b, 2);
}
inline std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) |
         (std::uint32_t(b[2]) << 16) | (std::uint32_t(b[3]) << 24);
}
inline std::uint16_t get_u16(std::istream& is) {
  unsigned char b[2];
  is.read(reinterpret_cast<char*>(b), 2);
  return std::uint16_t(b[0]) | (std::uint16_t(b[1]) << 8);
}
}  // namespace detail

inline void write_wav(const std::string& path, const std::vector<double>& x,
                      std::uint32_t sample_rate) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write " + path);
  std::uint32_t data_bytes = std::uint32_t(x.size()) * 2;
  os.write("RIFF", 4);
  detail::put_u32(os, 36 + data_bytes);
  os.write("WAVE", 4);
  os.write("fmt ", 4);
  detail::put_u32(os, 16);
  detail::put_u16(os, 1);  // PCM
  detail::put_u16(os, 1);  // mono
  detail::put_u32(os, sample_rate);
  detail::put_u32(os, sample_rate * 2);
  detail::put_u16(os, 2);
  detail::put_u16(os, 16);
  os.write("data", 4);
  detail::put_u32(os, data_bytes);
  for (double v : x) {
    std::int16_t s = quantize_i16(v);
    detail::put_u16(os, std::uint16_t(s));
  }
  if (!os) throw Error("short write to " + path);
}

inline std::vector<double> read_wav(const std::string& path,
                                    std::uint32_t* sample_rate = nullptr) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot read " + path);
  char tag[5] = {0};
  is.read(tag, 4);
  if (std::string(tag) != "RIFF") throw Error(path + ": not a RIFF file");
  detail::get_u32(is);
  is.read(tag, 4);
  if (std::string(tag) != "WAVE") throw Error(path + ": not a WAVE file");

  std::uint16_t channels = 0, bits = 0;
  std::uint32_t rate = 0;
  std::vector<double> samples;
  while (is.read(tag, 4)) {
    std::uint32_t chunk = detail::get_u32(is);
    std::string id(tag, 4);
    if (id == "fmt ") {
      std::uint16_t fmt = detail::get_u16(is);
      channels = detail::get_u16(is);
      rate = detail::get_u32(is);
      detail::get_u32(is);
      detail::get_u16(is);
      bits = detail::get_u16(is);
      if (chunk > 16) is.ignore(chunk - 16);
      if (fmt != 1 || channels != 1 || bits != 16)
        throw Error(path + ": expected 16-bit PCM mono");
    } else if (id == "data") {
      samples.reserve(chunk / 2);
      for (std::uint32_t i = 0; i < chunk / 2; ++i) {
        std::int16_t s = std::int16_t(detail::get_u16(is));
        samples.push_back(s / 32767.0);
      }
      break;
    } else {
      is.ignore(chunk);
    }
  }
  if (sample_rate) *sample_rate = rate;
  return samples;
}

// ---------------------------------------------------------------------------
// PGM, 8-bit binary grayscale. Values in [0, 1] map to [0, 255].
// ---------------------------------------------------------------------------

inline void write_pgm(const std::string& path,
                      const std::vector<double>& pixels, std::size_t rows,
                      std::size_t cols) {
  if (pixels.size() != rows * cols)
    throw DimensionError("pixel count does not match image shape");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write " + path);
  os << "P5\n" << cols << " " << rows << "\n255\n";
  for (double v : pixels) {
    double c = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
    os.put(char(std::lround(c * 255.0)));
  }
}

inline std::vector<double> read_pgm(const std::string& path, std::size_t* rows,
                                    std::size_t* cols) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot read " + path);
  std::string magic;
  is >> magic;
  if (magic != "P5") throw Error(path + ": expected binary PGM");
  std::size_t w = 0, h = 0;
  int maxval = 0;
  is >> w >> h >> maxval;
  is.get();  // single whitespace after header
  if (maxval != 255) throw Error(path + ": expected 8-bit data");
  std::vector<double> pixels(w * h);
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    int c = is.get();
    if (c == EOF) throw Error(path + ": truncated pixel data");
    pixels[i] = c / 255.0;
  }
  if (rows) *rows = h;
  if (cols) *cols = w;
  return pixels;
}

// ---------------------------------------------------------------------------
// CSV with a header row; all values doubles.
// ---------------------------------------------------------------------------

struct CsvTable {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;

  std::size_t col(const std::string& name) const {
    for (std::size_t i = 0; i < columns.size(); ++i)
      if (columns[i] == name) return i;
    throw Error("missing CSV column: " + name);
  }
};

inline void write_csv(const std::string& path, const CsvTable& table) {
  std::ofstream os(path);
  if (!os) throw Error("cannot write " + path);
  for (std::size_t i = 0; i < table.columns.size(); ++i) {
    if (i) os << ",";
    os << table.columns[i];
  }
  os << "\n";
  char buf[32];
  for (const auto& row : table.rows) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) os << ",";
      std::snprintf(buf, sizeof buf, "%.17g", row[i]);
      os << buf;
    }
    os << "\n";
  }
}

inline CsvTable read_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot read " + path);
  CsvTable table;
  std::string line;
  if (!std::getline(is, line)) throw Error(path + ": empty CSV");
  std::stringstream hs(line);
  std::string cell;
  while (std::getline(hs, cell, ',')) table.columns.push_back(cell);
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::stringstream ls(line);
    std::vector<double> row;
    while (std::getline(ls, cell, ',')) row.push_back(std::stod(cell));
    if (row.size() != table.columns.size())
      throw Error(path + ": ragged CSV row");
    table.rows.push_back(std::move(row));
  }
  return table;
}

// Bare matrix without a header (attention map grids).
inline void write_csv_matrix(const std::string& path,
                             const std::vector<std::vector<double>>& m) {
  std::ofstream os(path);
  if (!os) throw Error("cannot write " + path);
  char buf[32];
  for (const auto& row : m) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) os << ",";
      std::snprintf(buf, sizeof buf, "%.17g", row[i]);
      os << buf;
    }
    os << "\n";
  }
}

inline std::vector<std::vector<double>> read_csv_matrix(
    const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot read " + path);
  std::vector<std::vector<double>> m;
  std::string line, cell;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::stringstream ls(line);
    std::vector<double> row;
    while (std::getline(ls, cell, ',')) row.push_back(std::stod(cell));
    m.push_back(std::move(row));
  }
  return m;
}

// ---------------------------------------------------------------------------
// Checkpoints: flat name -> tensor, text, full double precision.
// ---------------------------------------------------------------------------

inline void save_checkpoint(const std::string& path, const ParamStore& ps) {
  std::ofstream os(path);
  if (!os) throw Error("cannot write " + path);
  os << "avsep-checkpoint 1\n" << ps.names().size() << "\n";
  char buf[32];
  for (const auto& name : ps.names()) {
    const Tensor& t = ps.get(name).value();
    os << name << " " << t.rank();
    for (std::size_t i = 0; i < t.rank(); ++i)
      os << " " << axis_name(t.axes()[i]) << " " << t.dims()[i];
    os << "\n";
    for (std::size_t i = 0; i < t.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%.17g", t[i]);
      os << buf << (i + 1 == t.size() ? "" : " ");
    }
    os << "\n";
  }
  if (!os) throw Error("short write to " + path);
}

// Copies stored values into the matching parameters of an already built
// store; shapes must agree and no entry may be missing on either side.
inline void load_checkpoint(const std::string& path, ParamStore& ps) {
  std::ifstream is(path);
  if (!is) throw Error("cannot read " + path);
  std::string magic;
  int version = 0;
  is >> magic >> version;
  if (magic != "avsep-checkpoint" || version != 1)
    throw Error(path + ": not a checkpoint file");
  std::size_t count = 0;
  is >> count;
  if (count != ps.names().size())
    throw Error(path + ": expected " + std::to_string(ps.names().size()) +
                " parameters, file has " + std::to_string(count));
  for (std::size_t e = 0; e < count; ++e) {
    std::string name;
    std::size_t rank = 0;
    is >> name >> rank;
    AxisList axes;
    std::vector<std::size_t> dims;
    for (std::size_t i = 0; i < rank; ++i) {
      std::string an;
      std::size_t d;
      is >> an >> d;
      axes.push_back(axis_from_name(an));
      dims.push_back(d);
    }
    Var p = ps.get(name);
    Tensor& t = p.mutable_value();
    if (t.axes() != axes || t.dims() != dims)
      throw DimensionError(path + ": shape mismatch for " + name);
    for (std::size_t i = 0; i < t.size(); ++i) {
      if (!(is >> t[i])) throw Error(path + ": truncated values for " + name);
    }
  }
}

// ---------------------------------------------------------------------------
// Flat key=value config files.
// ---------------------------------------------------------------------------

inline std::map<std::string, std::string> read_kv_file(
    const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot read " + path);
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(is, line)) {
    std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    std::size_t a = line.find_first_not_of(" \t\r");
    if (a == std::string::npos) continue;
    std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("malformed config line: " + line);
    auto trim = [](std::string s) {
      std::size_t b = s.find_first_not_of(" \t\r");
      std::size_t e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string()
                                    : s.substr(b, e - b + 1);
    };
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

inline void write_kv_file(const std::string& path,
                          const std::map<std::string, std::string>& kv) {
  std::ofstream os(path);
  if (!os) throw Error("cannot write " + path);
  for (const auto& [k, v] : kv) os << k << "=" << v << "\n";
}

}  // namespace avsep
