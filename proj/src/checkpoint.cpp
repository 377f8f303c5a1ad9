#include "lupindp/checkpoint.hpp"

#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>

namespace lupindp {

namespace {

std::string g17(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

std::map<std::string, std::string> key_values(const std::string& line, std::size_t line_no) {
  std::istringstream in(line);
  std::map<std::string, std::string> kv;
  std::string tok;
  while (in >> tok) {
    const auto eq = tok.find('=');
    if (eq == std::string::npos) continue;
    kv[tok.substr(0, eq)] = tok.substr(eq + 1);
  }
  if (kv.empty()) throw ParseError("expected key=value pairs", line_no);
  return kv;
}

const std::string& need(const std::map<std::string, std::string>& kv, const std::string& key, std::size_t line_no) {
  const auto it = kv.find(key);
  if (it == kv.end()) throw ParseError("missing '" + key + "'", line_no);
  return it->second;
}

}  // namespace

void save_checkpoint(std::ostream& os, const Checkpoint& ckpt) {
  const ModelConfig& c = ckpt.params.config;
  os << "#lupindp-checkpoint version=" << kCheckpointVersion << '\n';
  os << "run mode=" << mode_name(ckpt.mode) << " seed=" << ckpt.seed << " epochs=" << ckpt.epochs << '\n';
  os << "config observation_dim=" << c.observation_dim << " representation_dim=" << c.representation_dim
     << " privileged_dim=" << c.privileged_dim << " privileged_representation_dim=" << c.privileged_representation_dim
     << " latent_dim=" << c.latent_dim << " ode_state_dim=" << c.ode_state_dim << " hidden=" << c.hidden
     << " ode_substeps=" << c.ode_substeps << " scale_floor=" << g17(c.scale_floor) << '\n';
  const auto& names = parameter_block_names();
  const auto blocks = ckpt.params.blocks();
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const Matrix& m = *blocks[i];
    os << "block " << names[i] << ' ' << m.rows() << ' ' << m.cols() << '\n';
    for (Index r = 0; r < m.rows(); ++r) {
      for (Index col = 0; col < m.cols(); ++col) os << (col ? " " : "") << g17(m(r, col));
      os << '\n';
    }
  }
  os << "end\n";
}

Checkpoint load_checkpoint(std::istream& is) {
  std::string line;
  std::size_t line_no = 0;
  auto next = [&](const char* what) {
    while (std::getline(is, line)) {
      ++line_no;
      if (!line.empty()) return;
    }
    throw ParseError(std::string("unexpected end of checkpoint, expected ") + what, line_no);
  };

  next("header");
  if (line.rfind("#lupindp-checkpoint", 0) != 0) throw ParseError("not a checkpoint file", line_no);
  const int version = std::stoi(need(key_values(line, line_no), "version", line_no));
  if (version != kCheckpointVersion)
    throw ParseError("checkpoint version " + std::to_string(version) + " is not supported", line_no);

  Checkpoint ckpt;
  next("run line");
  if (line.rfind("run ", 0) != 0) throw ParseError("expected 'run' line", line_no);
  try {
    const auto kv = key_values(line, line_no);
    ckpt.mode = parse_mode(need(kv, "mode", line_no));
    ckpt.seed = std::stoull(need(kv, "seed", line_no));
    ckpt.epochs = std::stoi(need(kv, "epochs", line_no));
  } catch (const ParseError&) {
    throw;
  } catch (const std::exception& e) {
    throw ParseError(std::string("malformed run line: ") + e.what(), line_no);
  }

  next("config line");
  if (line.rfind("config ", 0) != 0) throw ParseError("expected 'config' line", line_no);
  ModelConfig c;
  try {
    const auto kv = key_values(line, line_no);
    c.observation_dim = std::stol(need(kv, "observation_dim", line_no));
    c.representation_dim = std::stol(need(kv, "representation_dim", line_no));
    c.privileged_dim = std::stol(need(kv, "privileged_dim", line_no));
    c.privileged_representation_dim = std::stol(need(kv, "privileged_representation_dim", line_no));
    c.latent_dim = std::stol(need(kv, "latent_dim", line_no));
    c.ode_state_dim = std::stol(need(kv, "ode_state_dim", line_no));
    c.hidden = std::stol(need(kv, "hidden", line_no));
    c.ode_substeps = std::stoi(need(kv, "ode_substeps", line_no));
    c.scale_floor = std::stod(need(kv, "scale_floor", line_no));
    c.validate();
  } catch (const ParseError&) {
    throw;
  } catch (const std::exception& e) {
    throw ParseError(std::string("malformed config line: ") + e.what(), line_no);
  }

  // Shapes come from a freshly laid-out model; values are overwritten.
  Rng scratch(0);
  ckpt.params = init_model(c, scratch);
  const auto& names = parameter_block_names();
  auto blocks = ckpt.params.blocks();
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    next("parameter block");
    std::istringstream head(line);
    std::string word, name;
    Index rows = 0, cols = 0;
    if (!(head >> word >> name >> rows >> cols) || word != "block") throw ParseError("expected 'block' line", line_no);
    if (name != names[i]) throw ParseError("expected block '" + names[i] + "', found '" + name + "'", line_no);
    Matrix& m = *blocks[i];
    if (rows != m.rows() || cols != m.cols())
      throw ParseError("block '" + name + "' has shape " + std::to_string(rows) + "x" + std::to_string(cols) +
                           ", config implies " + std::to_string(m.rows()) + "x" + std::to_string(m.cols()),
                       line_no);
    for (Index r = 0; r < rows; ++r) {
      next("parameter row");
      std::istringstream row(line);
      std::string tok;
      Index col = 0;
      while (row >> tok) {
        if (col >= cols) throw ParseError("too many values in block '" + name + "'", line_no);
        try {
          std::size_t used = 0;
          m(r, col) = std::stod(tok, &used);
          if (used != tok.size()) throw std::invalid_argument(tok);
        } catch (const std::exception&) {
          throw ParseError("invalid number '" + tok + "'", line_no);
        }
        ++col;
      }
      if (col != cols) throw ParseError("too few values in block '" + name + "'", line_no);
    }
  }
  next("end marker");
  if (line != "end") throw ParseError("expected 'end' marker", line_no);
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  save_checkpoint(os, ckpt);
  if (!os) throw std::runtime_error("failed writing " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  return load_checkpoint(is);
}

}  // namespace lupindp
