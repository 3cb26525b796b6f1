#include "msrn/io.hpp"

#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace msrn {

namespace {

constexpr char kMagic[6] = {'M', 'S', 'R', 'N', 'T', '1'};

void put_u32le(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff), static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff), static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32le(std::istream& is, const std::string& path) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw std::runtime_error(path + ": truncated MSRNT1 header");
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) | (static_cast<uint32_t>(b[2]) << 16) |
         (static_cast<uint32_t>(b[3]) << 24);
}

void put_f64le(std::ostream& os, double v) {
  uint64_t u;
  std::memcpy(&u, &v, 8);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((u >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 8);
}

double get_f64le(std::istream& is, const std::string& path) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8)) throw std::runtime_error(path + ": truncated MSRNT1 payload");
  uint64_t u = 0;
  for (int i = 0; i < 8; ++i) u |= static_cast<uint64_t>(b[i]) << (8 * i);
  double v;
  std::memcpy(&v, &u, 8);
  return v;
}

}  // namespace

void write_msrnt(const std::string& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error(path + ": cannot open for writing");
  os.write(kMagic, 6);
  put_u32le(os, static_cast<uint32_t>(t.rank()));
  for (int64_t d : t.shape()) put_u32le(os, static_cast<uint32_t>(d));
  for (int64_t i = 0; i < t.numel(); ++i) put_f64le(os, t[i]);
  if (!os) throw std::runtime_error(path + ": write failed");
}

Tensor read_msrnt(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error(path + ": cannot open");
  char magic[6];
  if (!is.read(magic, 6) || std::memcmp(magic, kMagic, 6) != 0)
    throw std::runtime_error(path + ": bad MSRNT1 magic bytes");
  uint32_t rank = get_u32le(is, path);
  if (rank > 8) throw std::runtime_error(path + ": unreasonable tensor rank " + std::to_string(rank));
  Shape shape;
  for (uint32_t i = 0; i < rank; ++i) {
    uint32_t d = get_u32le(is, path);
    if (d == 0) throw std::runtime_error(path + ": zero dimension in MSRNT1 header");
    shape.push_back(static_cast<int64_t>(d));
  }
  int64_t n = shape_numel(shape);
  std::vector<double> data(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) data[static_cast<size_t>(i)] = get_f64le(is, path);
  char extra;
  if (is.read(&extra, 1)) throw std::runtime_error(path + ": trailing bytes after MSRNT1 payload");
  return Tensor::from(std::move(shape), std::move(data));
}

void write_annotations_csv(const std::string& path, const std::vector<std::string>& label_names, const Tensor& y) {
  if (y.rank() != 2) throw std::invalid_argument("annotations: expected rank-2 tensor, got " + shape_str(y.shape()));
  if (static_cast<int64_t>(label_names.size()) != y.dim(1))
    throw std::invalid_argument("annotations: " + std::to_string(label_names.size()) + " names for " +
                                std::to_string(y.dim(1)) + " columns");
  std::ofstream os(path);
  if (!os) throw std::runtime_error(path + ": cannot open for writing");
  for (size_t i = 0; i < label_names.size(); ++i) {
    if (i) os << ',';
    os << label_names[i];
  }
  os << '\n';
  for (int64_t r = 0; r < y.dim(0); ++r) {
    for (int64_t c = 0; c < y.dim(1); ++c) {
      double v = y.at({r, c});
      if (v != 0.0 && v != 1.0) throw std::invalid_argument(path + ": annotations must be 0/1");
      if (c) os << ',';
      os << (v == 1.0 ? '1' : '0');
    }
    os << '\n';
  }
  if (!os) throw std::runtime_error(path + ": write failed");
}

AnnotationTable read_annotations_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error(path + ": cannot open");
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error(path + ": empty annotation file");
  AnnotationTable table;
  {
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) table.label_names.push_back(field);
  }
  if (table.label_names.empty()) throw std::runtime_error(path + ": header row has no label names");
  std::vector<double> values;
  int64_t rows = 0;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string field;
    int64_t cols = 0;
    while (std::getline(ss, field, ',')) {
      if (field == "0")
        values.push_back(0.0);
      else if (field == "1")
        values.push_back(1.0);
      else
        throw std::runtime_error(path + ": annotations must be 0/1, got '" + field + "'");
      ++cols;
    }
    if (cols != static_cast<int64_t>(table.label_names.size()))
      throw std::runtime_error(path + ": row " + std::to_string(rows + 1) + " has " + std::to_string(cols) +
                               " values, expected " + std::to_string(table.label_names.size()));
    ++rows;
  }
  if (rows == 0) throw std::runtime_error(path + ": no annotation rows");
  table.y = Tensor::from({rows, static_cast<int64_t>(table.label_names.size())}, std::move(values));
  return table;
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error(path + ": cannot open");
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(is, line)) lines.push_back(line);
  return lines;
}

void write_lines(const std::string& path, const std::vector<std::string>& lines) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error(path + ": cannot open for writing");
  for (const auto& l : lines) os << l << '\n';
  if (!os) throw std::runtime_error(path + ": write failed");
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error(path + ": cannot open for writing");
  os << text;
  if (!os) throw std::runtime_error(path + ": write failed");
}

}  // namespace msrn
