#include "physadv/harness.hpp"

int main(int argc, char** argv) { return physadv::harness::cli(argc, argv); }
