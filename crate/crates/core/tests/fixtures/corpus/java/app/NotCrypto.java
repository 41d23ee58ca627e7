package app;

import java.util.List;

// Mentions javax.crypto.Cipher only in a comment.
public class NotCrypto {
    public int size(List<String> xs) {
        return xs.size();
    }
}
