#include "geoprob/parallel.hpp"

#include <atomic>

namespace geoprob {

namespace {
std::atomic<int> g_jobs{1};
}

int default_jobs() { return g_jobs.load(); }

void set_default_jobs(int jobs) { g_jobs.store(jobs < 1 ? 1 : jobs); }

}  // namespace geoprob
