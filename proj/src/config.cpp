#include "recontour/model/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace recontour::model {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace

std::string RunConfig::echo() const {
  std::ostringstream os;
  os << "canvas = " << canvas << "\n";
  os << "classes = " << classes << "\n";
  os << "nv = " << nv << "\n";
  os << "stride = " << stride << "\n";
  os << "feat_dim = " << feat_dim << "\n";
  os << "iters = " << iters << "\n";
  os << "lambda = " << lambda << "\n";
  os << "alpha = " << alpha << "\n";
  os << "bb_c1 = " << bb_c1 << "\n";
  os << "bb_c2 = " << bb_c2 << "\n";
  os << "bb_c3 = " << bb_c3 << "\n";
  os << "f1_dim = " << f1_dim << "\n";
  os << "agg_width = " << agg_width << "\n";
  os << "agg_layers = " << agg_layers << "\n";
  os << "agg_ks = " << agg_ks << "\n";
  os << "fuse1 = " << fuse1 << "\n";
  os << "fuse2 = " << fuse2 << "\n";
  os << "fuse3 = " << fuse3 << "\n";
  os << "head_width = " << head_width << "\n";
  os << "mcr_dim = " << mcr_dim << "\n";
  os << "mcr_agg_width = " << mcr_agg_width << "\n";
  os << "mcr_fuse1 = " << mcr_fuse1 << "\n";
  os << "mcr_fuse2 = " << mcr_fuse2 << "\n";
  os << "mcr_fuse3 = " << mcr_fuse3 << "\n";
  os << "dv = " << dv() << "\n";  // derived, echoed for the record
  os << "peak_threshold = " << peak_threshold << "\n";
  os << "top_k = " << top_k << "\n";
  os << "kinds = " << kinds << "\n";
  os << "min_instances = " << min_instances << "\n";
  os << "max_instances = " << max_instances << "\n";
  os << "train_seeds = " << train_seeds << "\n";
  os << "val_seeds = " << val_seeds << "\n";
  os << "test_seeds = " << test_seeds << "\n";
  os << "batch = " << batch << "\n";
  os << "threads = " << threads << "\n";
  os << "lr = " << lr << "\n";
  os << "lr_decay = " << lr_decay << "\n";
  os << "lr_milestones = " << lr_milestones << "\n";
  os << "stage1_steps = " << stage1_steps << "\n";
  os << "stage2_steps = " << stage2_steps << "\n";
  os << "checkpoint_every = " << checkpoint_every << "\n";
  os << "seed = " << seed << "\n";
  os << "data_dir = " << data_dir << "\n";
  os << "out_dir = " << out_dir << "\n";
  return os.str();
}

uint64_t RunConfig::hash() const {
  uint64_t h = 0xCBF29CE484222325ull;
  for (char c : echo()) {
    h ^= static_cast<uint8_t>(c);
    h *= 0x100000001B3ull;
  }
  return h;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  auto as_int = [&] { return std::stoi(value); };
  auto as_double = [&] { return std::stod(value); };
  if (key == "canvas") canvas = as_int();
  else if (key == "classes") classes = as_int();
  else if (key == "nv") nv = as_int();
  else if (key == "stride") stride = as_int();
  else if (key == "feat_dim") feat_dim = as_int();
  else if (key == "iters") iters = as_int();
  else if (key == "lambda") lambda = as_double();
  else if (key == "alpha") alpha = as_double();
  else if (key == "bb_c1") bb_c1 = as_int();
  else if (key == "bb_c2") bb_c2 = as_int();
  else if (key == "bb_c3") bb_c3 = as_int();
  else if (key == "f1_dim") f1_dim = as_int();
  else if (key == "agg_width") agg_width = as_int();
  else if (key == "agg_layers") agg_layers = as_int();
  else if (key == "agg_ks") agg_ks = as_int();
  else if (key == "fuse1") fuse1 = as_int();
  else if (key == "fuse2") fuse2 = as_int();
  else if (key == "fuse3") fuse3 = as_int();
  else if (key == "head_width") head_width = as_int();
  else if (key == "mcr_dim") mcr_dim = as_int();
  else if (key == "mcr_agg_width") mcr_agg_width = as_int();
  else if (key == "mcr_fuse1") mcr_fuse1 = as_int();
  else if (key == "mcr_fuse2") mcr_fuse2 = as_int();
  else if (key == "mcr_fuse3") mcr_fuse3 = as_int();
  else if (key == "dv") { /* derived; accepted in echoes, ignored */ }
  else if (key == "peak_threshold") peak_threshold = as_double();
  else if (key == "top_k") top_k = as_int();
  else if (key == "kinds") kinds = value;
  else if (key == "min_instances") min_instances = as_int();
  else if (key == "max_instances") max_instances = as_int();
  else if (key == "train_seeds") train_seeds = value;
  else if (key == "val_seeds") val_seeds = value;
  else if (key == "test_seeds") test_seeds = value;
  else if (key == "batch") batch = as_int();
  else if (key == "threads") threads = as_int();
  else if (key == "lr") lr = as_double();
  else if (key == "lr_decay") lr_decay = as_double();
  else if (key == "lr_milestones") lr_milestones = value;
  else if (key == "stage1_steps") stage1_steps = as_int();
  else if (key == "stage2_steps") stage2_steps = as_int();
  else if (key == "checkpoint_every") checkpoint_every = as_int();
  else if (key == "seed") seed = std::stoull(value);
  else if (key == "data_dir") data_dir = value;
  else if (key == "out_dir") out_dir = value;
  else throw std::runtime_error("unknown config key: " + key);
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open config " + path);
  RunConfig cfg;
  std::string line;
  int line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": expected key = value");
    cfg.set(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
  return cfg;
}

std::vector<int> parse_int_list(const std::string& csv) {
  std::vector<int> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(std::stoi(item));
  }
  return out;
}

std::pair<uint64_t, uint64_t> parse_seed_range(const std::string& s) {
  size_t dots = s.find("..");
  if (dots == std::string::npos)
    throw std::runtime_error("seed range must be 'first..last': " + s);
  uint64_t a = std::stoull(trim(s.substr(0, dots)));
  uint64_t b = std::stoull(trim(s.substr(dots + 2)));
  if (b < a) throw std::runtime_error("seed range end before start: " + s);
  return {a, b};
}

std::vector<std::string> split_csv(const std::string& csv) {
  std::vector<std::string> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

}  // namespace recontour::model
