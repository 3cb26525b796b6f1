#pragma once

#include <string>
#include <vector>

#include "msrn/tensor.hpp"

namespace msrn {

// MSRNT1 tensor file: 6 magic bytes "MSRNT1", u32 LE rank,
// rank x u32 LE dims, row-major f64 LE payload.
void write_msrnt(const std::string& path, const Tensor& t);
Tensor read_msrnt(const std::string& path);

// Annotation matrix as CSV: header row of label names, then one
// row of 0/1 values per image.
void write_annotations_csv(const std::string& path, const std::vector<std::string>& label_names, const Tensor& y);

struct AnnotationTable {
  std::vector<std::string> label_names;
  Tensor y;  // N x n, entries 0/1
};
AnnotationTable read_annotations_csv(const std::string& path);

std::vector<std::string> read_lines(const std::string& path);
void write_lines(const std::string& path, const std::vector<std::string>& lines);
void write_text(const std::string& path, const std::string& text);

}  // namespace msrn
