#include "dynroute/madds_counter.hpp"

namespace dynroute::madds {

Tally& local_tally() {
  thread_local Tally tally;
  return tally;
}

}  // namespace dynroute::madds
