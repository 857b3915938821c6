#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include "branchsel/log.hpp"

int main(int argc, char** argv) {
  branchsel::configure_logging("error");
  doctest::Context ctx(argc, argv);
  return ctx.run();
}
