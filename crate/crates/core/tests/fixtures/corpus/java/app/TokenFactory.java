package app;

import java.security.SecureRandom;
import java.util.Random;

public class TokenFactory {
    private final Random random = new Random();
    private final SecureRandom secure = new SecureRandom();

    public long sessionToken() {
        return random.nextLong();
    }

    public byte[] nonce() {
        byte[] n = new byte[16];
        secure.nextBytes(n);
        return n;
    }
}
