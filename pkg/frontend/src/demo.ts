/**
 * Minimal demo: subscribe and publish against a running broker.
 *
 *   python3 -m hri_bridge.cli serve --bind 127.0.0.1:9123   # in one shell
 *   npm run demo -- 127.0.0.1 9123                          # in another
 */

import { ClientSession } from "./client.js";
import { Int32, doc } from "./document.js";

async function main(): Promise<void> {
  const host = process.argv[2] ?? "127.0.0.1";
  const port = Number(process.argv[3] ?? "9123");

  const listener = await ClientSession.connect(host, port);
  listener.subscribe(
    "/chatter",
    (msg) => {
      console.log("received:", Object.fromEntries(msg.entries()));
    },
    10,
  );

  const talker = await ClientSession.connect(host, port);
  talker.advertise("/chatter", "demo_msgs/Counter");
  for (let i = 0; i < 5; i++) {
    talker.publish(
      "/chatter",
      doc({ count: new Int32(i), stamp_us: BigInt(Date.now()) * 1000n, note: `hello ${i}` }),
    );
    await new Promise((r) => setTimeout(r, 200));
  }

  await new Promise((r) => setTimeout(r, 300));
  await talker.close();
  await listener.close();
}

main().catch((err) => {
  console.error(err);
  process.exit(1);
});
