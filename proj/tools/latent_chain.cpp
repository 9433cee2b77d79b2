#include "latent_chain/app.hpp"

int main(int argc, char** argv) { return latent_chain::app::run(argc, argv); }
