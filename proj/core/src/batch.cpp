#include "spm/batch.hpp"

#include <algorithm>
#include <string>

namespace spm {

namespace {

void pad(const std::vector<std::vector<std::int64_t>>& seqs, std::vector<std::int64_t>& ids,
         std::vector<std::size_t>& lengths, Tensor& mask, std::size_t& len) {
  len = 0;
  for (const auto& s : seqs) {
    if (s.empty()) throw DimensionError("Batch: empty sentence");
    len = std::max(len, s.size());
  }
  std::size_t B = seqs.size();
  ids.assign(B * len, 0);
  lengths.resize(B);
  std::vector<Real> m(B * len, Real{0});
  for (std::size_t i = 0; i < B; ++i) {
    lengths[i] = seqs[i].size();
    std::copy(seqs[i].begin(), seqs[i].end(), ids.begin() + static_cast<std::ptrdiff_t>(i * len));
    std::fill_n(m.begin() + static_cast<std::ptrdiff_t>(i * len), seqs[i].size(), Real{1});
  }
  mask = Tensor::from({B, len}, std::move(m));
}

}  // namespace

Batch Batch::assemble(const std::vector<std::vector<std::int64_t>>& a,
                      const std::vector<std::vector<std::int64_t>>& b, std::vector<int> labels,
                      std::vector<Real> targets, std::vector<ShiftReduceProgram> programs_a,
                      std::vector<ShiftReduceProgram> programs_b) {
  if (a.size() != b.size() || a.empty()) {
    throw DimensionError("Batch: " + std::to_string(a.size()) + " first sentences vs " + std::to_string(b.size()) +
                         " second sentences");
  }
  Batch out;
  out.size = a.size();
  pad(a, out.ids_a, out.lengths_a, out.mask_a, out.len_a);
  pad(b, out.ids_b, out.lengths_b, out.mask_b, out.len_b);
  auto check = [&](std::size_t n, const char* what) {
    if (n != 0 && n != out.size) throw DimensionError(std::string("Batch: wrong number of ") + what);
  };
  check(labels.size(), "labels");
  check(targets.size(), "targets");
  check(programs_a.size(), "trees");
  if (programs_a.size() != programs_b.size()) throw DimensionError("Batch: trees must come in pairs");
  for (std::size_t i = 0; i < programs_a.size(); ++i) {
    if (programs_a[i].leaf_count() != out.lengths_a[i] || programs_b[i].leaf_count() != out.lengths_b[i]) {
      throw DimensionError("Batch: tree leaves do not match tokens for pair " + std::to_string(i));
    }
  }
  out.labels = std::move(labels);
  out.targets = std::move(targets);
  out.programs_a = std::move(programs_a);
  out.programs_b = std::move(programs_b);
  out.indices.resize(out.size);
  for (std::size_t i = 0; i < out.size; ++i) out.indices[i] = i;
  return out;
}

Batch Batch::example(std::size_t i) const {
  auto row = [](const std::vector<std::int64_t>& ids, std::size_t len, std::size_t n, std::size_t r) {
    return std::vector<std::int64_t>(ids.begin() + static_cast<std::ptrdiff_t>(r * len),
                                     ids.begin() + static_cast<std::ptrdiff_t>(r * len + n));
  };
  std::vector<int> l;
  std::vector<Real> t;
  std::vector<ShiftReduceProgram> pa, pb;
  if (!labels.empty()) l.push_back(labels[i]);
  if (!targets.empty()) t.push_back(targets[i]);
  if (has_trees()) {
    pa.push_back(programs_a[i]);
    pb.push_back(programs_b[i]);
  }
  Batch out = assemble({row(ids_a, len_a, lengths_a[i], i)}, {row(ids_b, len_b, lengths_b[i], i)}, std::move(l),
                       std::move(t), std::move(pa), std::move(pb));
  out.indices = {indices.empty() ? i : indices[i]};
  return out;
}

}  // namespace spm
