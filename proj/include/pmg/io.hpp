#ifndef PMG_IO_HPP
#define PMG_IO_HPP

#include <bit>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>

#include "pmg/mesh.hpp"

namespace pmg {

static_assert(std::endian::native == std::endian::little,
              "dump format writes raw little-endian doubles");

/// Solution dump: a plain-text header describing the leaf blocks followed
/// by one raw little-endian float64 array of all block interiors.
/// Blocks are ordered level-major, then lexicographic by origin; cells
/// within a block are lexicographic with x fastest. The origin index is
/// the block's integer cell origin at its own level (coords * N).
template <int Dim>
void write_dump(const TreeMesh<Dim>& mesh, int var, const std::string& path,
                const std::string& field_name) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), "cannot open dump file: " + path);
  const int N = mesh.block_size();
  const auto leaves = mesh.leaves();
  size_t per_block = 1;
  for (int k = 0; k < Dim; ++k) per_block *= static_cast<size_t>(N);

  out << "pmg dump 1\n";
  out << "field " << field_name << "\n";
  out << "dim " << Dim << "\n";
  char buf[256];
  auto write_vec = [&](const char* name, const Vec<Dim>& v) {
    out << name;
    for (int k = 0; k < Dim; ++k) {
      std::snprintf(buf, sizeof buf, " %.17g", v[k]);
      out << buf;
    }
    out << "\n";
  };
  write_vec("domain_lo", mesh.domain_lo());
  write_vec("domain_hi", mesh.domain_hi());
  out << "block_size " << N << "\n";
  out << "blocks " << leaves.size() << "\n";
  size_t offset = 0;
  for (int id : leaves) {
    const Block<Dim>& b = mesh.block(id);
    out << "block " << b.level;
    for (int k = 0; k < Dim; ++k) out << " " << b.coords[k] * N;
    out << " " << offset << "\n";
    offset += per_block;
  }
  out << "data_doubles " << offset << "\n";
  out << "DATA\n";

  std::vector<double> blockbuf(per_block);
  IVec<Dim> zero{}, nn;
  nn.fill(N);
  for (int id : leaves) {
    const double* f = mesh.field(id, var);
    size_t j = 0;
    for_box<Dim>(zero, nn,
                 [&](const IVec<Dim>& i) { blockbuf[j++] = f[mesh.lin(i)]; });
    out.write(reinterpret_cast<const char*>(blockbuf.data()),
              static_cast<std::streamsize>(per_block * sizeof(double)));
  }
  require(out.good(), "failed writing dump file: " + path);
}

/// Parsed dump, primarily for tests and external tooling.
struct DumpData {
  std::string field;
  int dim = 0;
  std::vector<double> domain_lo, domain_hi;
  int block_size = 0;
  struct BlockRec {
    int level;
    std::vector<long> origin_index;
    size_t offset;
  };
  std::vector<BlockRec> blocks;
  std::vector<double> data;
};

inline DumpData read_dump(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), "cannot open dump file: " + path);
  DumpData d;
  std::string line;
  std::getline(in, line);
  require(line == "pmg dump 1", "not a pmg dump file: " + path);
  size_t n_doubles = 0;
  while (std::getline(in, line)) {
    if (line == "DATA") break;
    std::istringstream ss(line);
    std::string key;
    ss >> key;
    if (key == "field") {
      ss >> d.field;
    } else if (key == "dim") {
      ss >> d.dim;
    } else if (key == "domain_lo" || key == "domain_hi") {
      auto& v = key == "domain_lo" ? d.domain_lo : d.domain_hi;
      double x;
      while (ss >> x) v.push_back(x);
    } else if (key == "block_size") {
      ss >> d.block_size;
    } else if (key == "blocks") {
      size_t n;
      ss >> n;
      d.blocks.reserve(n);
    } else if (key == "block") {
      DumpData::BlockRec b;
      ss >> b.level;
      b.origin_index.resize(static_cast<size_t>(d.dim));
      for (auto& o : b.origin_index) ss >> o;
      ss >> b.offset;
      d.blocks.push_back(std::move(b));
    } else if (key == "data_doubles") {
      ss >> n_doubles;
    }
  }
  d.data.resize(n_doubles);
  in.read(reinterpret_cast<char*>(d.data.data()),
          static_cast<std::streamsize>(n_doubles * sizeof(double)));
  require(in.gcount() ==
              static_cast<std::streamsize>(n_doubles * sizeof(double)),
          "dump file truncated: " + path);
  return d;
}

/// Minimal CSV writer with deterministic float formatting.
class CsvWriter {
 public:
  CsvWriter(const std::string& path, const std::string& header) : out_(path) {
    require(out_.good(), "cannot open output file: " + path);
    out_ << header << "\n";
  }

  void row(const std::vector<double>& vals) {
    char buf[64];
    for (size_t i = 0; i < vals.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%.17g", vals[i]);
      out_ << (i ? "," : "") << buf;
    }
    out_ << "\n";
  }

  void row_int_prefix(long idx, const std::vector<double>& vals) {
    out_ << idx;
    char buf[64];
    for (double v : vals) {
      std::snprintf(buf, sizeof buf, "%.17g", v);
      out_ << "," << buf;
    }
    out_ << "\n";
  }

  void raw(const std::string& line) { out_ << line << "\n"; }

  void close() { out_.close(); }

 private:
  std::ofstream out_;
};

inline void write_text_file(const std::string& path, const std::string& body) {
  std::ofstream out(path);
  require(out.good(), "cannot open output file: " + path);
  out << body;
  require(out.good(), "failed writing: " + path);
}

}  // namespace pmg

#endif  // PMG_IO_HPP
